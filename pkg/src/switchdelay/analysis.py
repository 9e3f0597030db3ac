"""Stability constants, backstepping transforms and certificates.

The constants follow the closed-form expressions of the averaged
predictor-feedback stability proof literally; no attempt is made to
tighten them. Transforms operate on simulated trajectories on the grid.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .control import mode_predictor, predictor_window
from .linalg import NormKind, common_lyapunov, mat_exp, norm, vec_norm
from .plant import InputHistory, Plant, Trajectory
from .switching import SwitchingSignal

log = logging.getLogger(__name__)


def _max_pairwise(mats, kind) -> float:
    return max((norm(a - b, kind) for a, b in itertools.combinations(mats, 2)), default=0.0)


@dataclass(frozen=True)
class BoundConstants:
    """Closed-form constants of the mismatch and norm-equivalence bounds.

    ``delta1``, ``delta2`` and ``lam`` are functions of epsilon with every
    other constant frozen, so they can be inverted numerically.
    """

    eps_A: float
    eps_B: float
    eps_K: float
    M_A: float
    M_B: float
    M_K: float
    M_H: float
    D: float
    tau_d: float
    nu1: float
    nu2: float
    norm: NormKind

    @property
    def eps(self) -> float:
        return max(self.eps_A, self.eps_B, self.eps_K)

    def delta1(self, e: float) -> float:
        D = self.D
        return e * math.exp(self.M_A * D) * (
            self.M_K * (D / self.tau_d + 2) * D * math.exp(e * D) + 1)

    def delta2(self, e: float) -> float:
        D, MA, MB = self.D, self.M_A, self.M_B
        inner = math.exp(e * D) * D * MB * (1 + math.exp(MA * D) * (D / self.tau_d + 1)) + 1
        return e * math.exp(MA * D) * (self.M_K * inner + MB)

    def lam(self, e: Optional[float] = None) -> float:
        e = self.eps if e is None else e
        return max(self.delta1(e), self.delta2(e))


def bound_constants(plant: Plant, tau_d: float,
                    kind: NormKind | str = NormKind.SPECTRAL) -> BoundConstants:
    kind = NormKind.parse(kind)
    if tau_d <= 0:
        raise ValueError("tau_d must be positive")
    As = [m.A for m in plant.modes]
    Bs = [m.B for m in plant.modes]
    Ks = [m.K for m in plant.modes]
    M_A = max(norm(a, kind) for a in As)
    M_B = max(norm(b, kind) for b in Bs)
    M_K = max(norm(k, kind) for k in Ks)
    M_H = max(norm(m.H, kind) for m in plant.modes)
    D = plant.D

    def nu(M):
        return 2 * max(2 * M_K ** 2 * D * math.exp(2 * M * D),
                       1 + 2 * M_K ** 2 * D ** 2 * math.exp(2 * M * D) * M_B ** 2)

    return BoundConstants(
        eps_A=_max_pairwise(As, kind), eps_B=_max_pairwise(Bs, kind),
        eps_K=_max_pairwise(Ks, kind), M_A=M_A, M_B=M_B, M_K=M_K, M_H=M_H,
        D=D, tau_d=float(tau_d), nu1=nu(M_H), nu2=nu(M_A), norm=kind)


class MonotonicityError(RuntimeError):
    pass


def check_monotone(f, hi: float, points: int = 100) -> None:
    grid = np.linspace(0.0, hi, points)
    vals = [f(e) for e in grid]
    bad = [i for i in range(1, points) if not vals[i] > vals[i - 1]]
    if bad:
        i = bad[0]
        raise MonotonicityError(f"lambda not increasing between eps={grid[i - 1]:.6g} "
                                f"and eps={grid[i]:.6g}")


def invert_increasing(f, target: float, rtol: float = 1e-10,
                      upper: float = 1e6) -> tuple[float, bool]:
    """Solve f(e) = target for e >= 0, f increasing with f(0) = 0.

    Returns ``(e, saturated)``; ``saturated`` is True when f stays below
    ``target`` on [0, upper] and ``upper`` is returned.
    """
    if target <= 0:
        return 0.0, False
    hi = 1e-16
    while f(hi) < target:
        hi *= 2.0
        if hi > upper:
            return upper, True
    check_monotone(f, hi)
    lo = 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), False


@dataclass(frozen=True)
class EpsilonStar:
    value: float
    terms: tuple[float, ...]
    targets: tuple[float, ...]
    saturated: bool


def epsilon_star(consts: BoundConstants, P, Q) -> EpsilonStar:
    """Admissibility threshold on epsilon.

    Minimum of lambda^{-1}(1 / sqrt(2 e^D D nu1)) and
    lambda^{-1}(lambda_min(Q) / (2 M_B |P| sqrt(2 e^D D nu1))); the second
    term is dropped when M_B = 0.
    """
    D = consts.D
    root = math.sqrt(2 * math.exp(D) * D * consts.nu1)
    targets = [1.0 / root]
    if consts.M_B > 0:
        lam_min_Q = float(np.linalg.eigvalsh(np.asarray(Q, dtype=float)).min())
        targets.append(lam_min_Q / (2 * consts.M_B * norm(P, consts.norm) * root))
    terms, saturated = [], False
    for tgt in targets:
        e, sat = invert_increasing(consts.lam, tgt)
        terms.append(e)
        saturated |= sat
    return EpsilonStar(min(terms), tuple(terms), tuple(targets), saturated)


@dataclass
class StabilityCertificate:
    P: Optional[np.ndarray]
    Q: np.ndarray
    consts: BoundConstants
    available: bool
    eps_star: float = float("nan")
    lam: float = float("nan")
    b: float = float("nan")
    mu: float = float("nan")
    kappa: float = float("nan")
    rho: float = float("nan")
    xi: float = float("nan")
    admissible: bool = False
    saturated: bool = False
    mu_saturated: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def eps(self) -> float:
        return self.consts.eps

    @property
    def nu1(self) -> float:
        return self.consts.nu1

    @property
    def nu2(self) -> float:
        return self.consts.nu2

    CSV_COLUMNS = ("eps", "eps_star", "lambda", "nu1", "nu2", "b", "mu", "kappa", "rho", "xi",
                   "admissible")

    def row(self) -> dict:
        vals = {"eps": self.eps, "eps_star": self.eps_star, "lambda": self.lam,
                "nu1": self.nu1, "nu2": self.nu2, "b": self.b, "mu": self.mu,
                "kappa": self.kappa, "rho": self.rho, "xi": self.xi}
        out = {k: format(v, ".9g") for k, v in vals.items()}
        out["admissible"] = str(self.admissible).lower()
        return out

    def report(self) -> str:
        c = self.consts
        lines = [
            f"norm: {c.norm.value}",
            f"available: {str(self.available).lower()}",
            f"D: {c.D:.9g}", f"tau_d: {c.tau_d:.9g}",
            f"eps: {c.eps:.9g}", f"eps_A: {c.eps_A:.9g}", f"eps_B: {c.eps_B:.9g}",
            f"eps_K: {c.eps_K:.9g}",
            f"M_A: {c.M_A:.9g}", f"M_B: {c.M_B:.9g}", f"M_K: {c.M_K:.9g}", f"M_H: {c.M_H:.9g}",
            f"delta1: {c.delta1(c.eps):.9g}", f"delta2: {c.delta2(c.eps):.9g}",
        ]
        for k, v in self.row().items():
            if k != "eps":
                lines.append(f"{k}: {v}")
        lines.append(f"eps_star_saturated: {str(self.saturated).lower()}")
        lines.append(f"mu_saturated: {str(self.mu_saturated).lower()}")
        if self.P is not None:
            lines.append("P: " + np.array2string(self.P, precision=9, separator=", ")
                         .replace("\n", ""))
        lines.append("Q: " + np.array2string(self.Q, precision=9, separator=", ")
                     .replace("\n", ""))
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def certificate(plant: Plant, tau_d: float, kind: NormKind | str = NormKind.SPECTRAL,
                Q=None, P=None) -> StabilityCertificate:
    """Assemble every stability constant for ``plant``.

    ``P`` defaults to the common Lyapunov matrix found for ``Q`` (default
    identity). When none is found the certificate is marked unavailable.
    """
    consts = bound_constants(plant, tau_d, kind)
    Q = np.eye(plant.n) if Q is None else np.asarray(Q, dtype=float)
    if P is None:
        P = common_lyapunov([m.H for m in plant.modes], Q)
    if P is None:
        cert = StabilityCertificate(None, Q, consts, available=False)
        cert.notes.append("no common Lyapunov matrix found by the candidate search")
        return cert
    P = np.asarray(P, dtype=float)
    cert = StabilityCertificate(P, Q, consts, available=True)

    es = epsilon_star(consts, P, Q)
    cert.eps_star, cert.saturated = es.value, es.saturated
    D = consts.D
    lam = consts.lam()
    cert.lam = lam
    lam_min_Q = float(np.linalg.eigvalsh(Q).min())
    eig_P = np.linalg.eigvalsh(P)
    norm_P = norm(P, consts.norm)
    b = 2 * (consts.M_B * norm_P) ** 2 / lam_min_Q
    cert.b = b
    eD = math.exp(D)
    rate_w = 1 - 2 * eD * lam ** 2 * D * consts.nu1
    rate_x = (0.5 * lam_min_Q - 2 * b * eD * lam ** 2 * (D * consts.nu1 + 1)) / eig_P.max()
    cert.mu = min(rate_w, rate_x)
    denom = min(eig_P.min(), b)
    cert.kappa = max(eig_P.max(), b * eD) / denom if denom > 0 else math.inf
    cert.rho = math.sqrt(2 * consts.nu1 * consts.nu2 / cert.kappa)
    cert.xi = cert.mu / 2
    cert.admissible = bool(consts.eps < cert.eps_star)
    if cert.admissible and not cert.mu > 0:
        cert.notes.append("admissible but mu <= 0")
    if cert.mu >= 1 / D:
        cert.mu_saturated = True
        cert.notes.append("mu >= 1/D: exponential weight in the functional saturates")
    return cert


def q_sensitivity(plant: Plant, tau_d: float, kind: NormKind | str = NormKind.SPECTRAL,
                  Q=None, scales: Sequence[float] = (0.5, 1.0, 2.0)) -> list[dict]:
    """epsilon* recomputed with Q replaced by c Q (and P searched afresh).

    The common Lyapunov search is linear in Q, so lambda_min(Q) / |P| and
    hence epsilon* should not move with c.
    """
    Q = np.eye(plant.n) if Q is None else np.asarray(Q, dtype=float)
    rows = []
    for c in scales:
        cert = certificate(plant, tau_d, kind, Q=c * Q)
        ratio = float("nan")
        if cert.available:
            ratio = float(np.linalg.eigvalsh(cert.Q).min()) / norm(cert.P, cert.consts.norm)
        rows.append({"c": float(c), "eps_star": cert.eps_star, "ratio": ratio,
                     "available": cert.available})
    return rows


# -- backstepping transforms --------------------------------------------------


def backstepping_window(plant: Plant, sig: SwitchingSignal, t: float, x,
                        hist: InputHistory):
    """W(theta) = U(theta) - K_{sigma(theta+D)} P(theta) on the grid of [t - D, t].

    Returns ``(W, P, modes)``; ``W[-1]`` is W(t) and ``W[0]`` equals
    U(t - D) - K_{sigma(t)} X(t).
    """
    P, modes = predictor_window(plant, sig, t, x, hist)
    K = np.vstack([plant.modes[m].K for m in modes])
    W = hist.samples - np.einsum("ij,ij->i", K, P)
    return W, P, modes


def backstepping_w(plant: Plant, sig: SwitchingSignal, t: float, x, hist: InputHistory,
                   u_now: float) -> float:
    """W(t) = U(t) - K_{sigma(t+D)} P(t) with the exact predictor P."""
    from .control import exact_predictor

    p = exact_predictor(plant, sig, t, x, hist).vector
    return float(u_now - plant.modes[sig.mode_at(t + plant.D)].K[0] @ p)


def inverse_transform_pi(plant: Plant, sig: SwitchingSignal, t: float, W, x,
                         h: float, consistent: bool = True):
    """Recover U(theta) = W(theta) + K_{sigma(theta+D)} Pi(theta) on [t - D, t].

    ``W`` holds N + 1 grid values. Pi starts from X(t) and follows the
    closed-loop flow of each constant-mode piece driven by W. With
    ``consistent=True`` the flow is discretised exactly like the predictor
    (held cells, trapezoid kernel), which makes this the algebraic inverse
    of ``backstepping_window``; otherwise the cell map is e^{H h}.
    Returns ``(U, Pi)``.
    """
    W = np.asarray(W, dtype=float)
    N = len(W) - 1
    dummy = InputHistory(h, np.zeros(N + 1), t)
    # mode per cell from the same decomposition the predictor uses
    _, modes = predictor_window(plant, sig, t, np.zeros(plant.n), dummy)
    Pi = np.empty((N + 1, plant.n))
    U = np.empty(N + 1)
    p = np.asarray(x, dtype=float)
    maps = {}
    for c in range(N + 1):
        m = int(modes[c])
        mode = plant.modes[m]
        Pi[c] = p
        U[c] = W[c] + float(mode.K[0] @ p)
        if c == N:
            break
        if m not in maps:
            if consistent:
                pred = mode_predictor(mode.A, mode.B, plant.D, h)
                g = pred.weights[-1]
                F = pred.cell + np.outer(g, mode.K[0])
            else:
                F = mat_exp(mode.H * h)
                g = 0.5 * h * (F @ mode.B[:, 0] + mode.B[:, 0])
            maps[m] = (F, g)
        F, g = maps[m]
        p = F @ p + g * W[c]
    return U, Pi


def backstepping_channel(plant: Plant, sig: SwitchingSignal, traj: Trajectory):
    """Exact predictor P(t_j) and the backstepping variable along a trajectory.

    Returns ``(P, W_full)`` where ``W_full`` is indexed like ``traj.u_full``:
    the first N entries are W on the initial window [-D, 0), entry N + j is
    W(t_j). ``sig`` must already be snapped to the trajectory grid.
    """
    from .control import exact_predictor

    N, M = traj.N, len(traj)
    W_full = np.empty(N + M)
    hist0 = traj.history_at(0)
    W0, _, _ = backstepping_window(plant, sig, 0.0, traj.states[0], hist0)
    W_full[:N] = W0[:N]
    P = np.empty((M, plant.n))
    for j in range(M):
        t = float(traj.times[j])
        hist = traj.history_at(j)
        P[j] = exact_predictor(plant, sig, t, traj.states[j], hist).vector
        K = plant.modes[sig.mode_at(t + plant.D)].K
        W_full[N + j] = traj.inputs[j] - float(K[0] @ P[j])
    traj.diagnostics["w_initial"] = W_full[:N].copy()
    return P, W_full[N:]


def w_full(traj: Trajectory) -> np.ndarray:
    if "w" not in traj.diagnostics:
        raise ValueError("trajectory has no W channel; simulate with diagnostics=('w',)")
    return np.concatenate([traj.diagnostics["w_initial"], traj.diagnostics["w"]])


def target_system_residual(plant: Plant, traj: Trajectory) -> np.ndarray:
    """|dX/dt - (H_sigma X + B_sigma W(t - D))| per grid step.

    dX/dt is the forward difference over each step, so the residual is
    first order in h.
    """
    if len(traj) < 2:
        return np.zeros(0)
    W = w_full(traj)
    h = traj.h
    out = np.empty(len(traj) - 1)
    for j in range(len(traj) - 1):
        mode = plant.modes[int(traj.modes[j])]
        x = traj.states[j]
        rhs = mode.H @ x + mode.B[:, 0] * W[j]
        out[j] = np.linalg.norm((traj.states[j + 1] - x) / h - rhs)
    return out


# -- property checks along trajectories --------------------------------------


def mismatch_bound_check(consts: BoundConstants, traj: Trajectory, tol_factor: float = None,
                         atol: float = 1e-10):
    """Compare |W(t)| with lambda(eps)(|X(t)| + int |U|) at every grid point.

    Returns ``(lhs, rhs, ok)`` with ``rhs`` already inflated by ``tol_factor``
    (default 1 + 10 h). ``atol`` absorbs floating-point noise in W, which
    matters when lambda(eps) = 0 and the bound itself is zero.
    """
    tol_factor = 1 + 10 * traj.h if tol_factor is None else tol_factor
    W = traj.diagnostics["w"]
    lam = consts.lam()
    lhs = np.abs(W)
    rhs = np.empty(len(traj))
    for j in range(len(traj)):
        rhs[j] = lam * (vec_norm(traj.states[j], consts.norm)
                        + traj.window_integral(traj.u_full, j, 1))
    rhs *= tol_factor
    return lhs, rhs, bool(np.all(lhs <= rhs + atol))


def norm_equivalence_check(consts: BoundConstants, traj: Trajectory):
    """Both norm-equivalence inequalities at every grid time t >= D.

    Returns a dict with the worst ratios lhs/rhs for each inequality.
    """
    W = w_full(traj)
    N = traj.N
    r1 = r2 = 0.0
    for j in range(N, len(traj)):
        x2 = vec_norm(traj.states[j], consts.norm) ** 2
        u2 = traj.window_integral(traj.u_full, j, 2)
        w2 = traj.window_integral(W, j, 2)
        if u2 > 0:
            r1 = max(r1, u2 / (consts.nu1 * (x2 + w2)))
        if w2 > 0:
            r2 = max(r2, w2 / (consts.nu2 * (x2 + u2)))
    return {"nu1_ratio": r1, "nu2_ratio": r2, "ok": r1 <= 1.0 and r2 <= 1.0}


def envelope_check(cert: StabilityCertificate, traj: Trajectory):
    """Decay envelope |X| + sqrt(int U^2) <= rho (|X0| + sqrt(int U0^2)) e^{-xi t}.

    Also checks the target-system envelope with kappa, mu when the W channel
    is present. Returns the worst lhs/rhs ratios.
    """
    kind = cert.consts.norm
    x0 = vec_norm(traj.states[0], kind)
    u0 = math.sqrt(traj.window_integral(traj.u_full, 0, 2))
    worst = 0.0
    for j in range(len(traj)):
        lhs = vec_norm(traj.states[j], kind) + math.sqrt(traj.window_integral(traj.u_full, j, 2))
        rhs = cert.rho * (x0 + u0) * math.exp(-cert.xi * traj.times[j])
        worst = max(worst, lhs / rhs if rhs > 0 else math.inf)
    out = {"envelope_ratio": worst}
    if "w" in traj.diagnostics:
        W = w_full(traj)
        v0 = x0 ** 2 + traj.window_integral(W, 0, 2)
        worst_t = 0.0
        for j in range(len(traj)):
            lhs = vec_norm(traj.states[j], kind) ** 2 + traj.window_integral(W, j, 2)
            rhs = cert.kappa * v0 * math.exp(-cert.mu * traj.times[j])
            worst_t = max(worst_t, lhs / rhs if rhs > 0 else math.inf)
        out["target_ratio"] = worst_t
    out["ok"] = all(v <= 1.0 for k, v in out.items() if k.endswith("ratio"))
    return out


def tk_bound(A_list: Sequence, mode_seq: Sequence[int], offsets: Sequence[float], i: int,
             kind: NormKind | str = NormKind.SPECTRAL,
             D: Optional[float] = None) -> tuple[float, float]:
    """Frozen-mode versus switched transition mismatch and its inductive bound.

    ``offsets`` are s_0 = 0 < ... < s_k with ``len(mode_seq) == k``. Returns
    ``(T_k, eps_A k D e^{M_A s_k} e^{eps_A D})``; D defaults to s_k and
    must be at least s_k when given (the pieces sit inside a delay window).
    """
    kind = NormKind.parse(kind)
    A_list = [np.asarray(a, dtype=float) for a in A_list]
    k = len(mode_seq)
    n = A_list[0].shape[0]
    frozen = np.eye(n)
    switched = np.eye(n)
    for idx in range(k):
        dt = offsets[idx + 1] - offsets[idx]
        frozen = mat_exp(A_list[i] * dt) @ frozen
        switched = mat_exp(A_list[mode_seq[idx]] * dt) @ switched
    T = norm(frozen - switched, kind)
    eps_A = _max_pairwise(A_list, kind)
    M_A = max(norm(a, kind) for a in A_list)
    D = offsets[k] if D is None else float(D)
    if D < offsets[k] - 1e-12:
        raise ValueError("D must cover the last split point")
    bound = eps_A * k * D * math.exp(M_A * offsets[k]) * math.exp(eps_A * D)
    return T, bound
