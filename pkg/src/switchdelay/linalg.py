"""Small dense linear-algebra kernel.

Everything here works on plain ``numpy`` arrays of shape (n, n) or (n, 1)
with n in the single digits. The routines are deliberately simple:
Padé scaling-and-squaring for the matrix exponential, Kronecker
vectorisation for Lyapunov equations and Ackermann's formula for
single-input pole placement.
"""

from __future__ import annotations

import enum
import logging
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)


class DimensionError(ValueError):
    """Matrix shapes are incompatible with the requested operation."""


class InfeasibleError(ValueError):
    """The problem has no solution under the stated preconditions."""


class NormKind(str, enum.Enum):
    SPECTRAL = "spectral"
    FROBENIUS = "frobenius"
    INDUCED_1 = "induced-1"
    INDUCED_INF = "induced-inf"

    @classmethod
    def parse(cls, value: "NormKind | str") -> "NormKind":
        if isinstance(value, cls):
            return value
        aliases = {"2": cls.SPECTRAL, "fro": cls.FROBENIUS, "1": cls.INDUCED_1,
                   "inf": cls.INDUCED_INF}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


_MATRIX_ORD = {
    NormKind.SPECTRAL: 2,
    NormKind.FROBENIUS: "fro",
    NormKind.INDUCED_1: 1,
    NormKind.INDUCED_INF: np.inf,
}
# vector norm compatible with each matrix norm (|Mx| <= |M| |x|)
_VECTOR_ORD = {
    NormKind.SPECTRAL: 2,
    NormKind.FROBENIUS: 2,
    NormKind.INDUCED_1: 1,
    NormKind.INDUCED_INF: np.inf,
}


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    if M.ndim != 2 or M.size == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def _require_square(M: np.ndarray, name: str = "matrix") -> None:
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")


def norm(M, kind: NormKind | str = NormKind.SPECTRAL) -> float:
    """Matrix norm of ``M`` (vectors are treated as n x 1 columns)."""
    kind = NormKind.parse(kind)
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        return vec_norm(M, kind)
    return float(np.linalg.norm(M, _MATRIX_ORD[kind]))


def vec_norm(x, kind: NormKind | str = NormKind.SPECTRAL) -> float:
    kind = NormKind.parse(kind)
    return float(np.linalg.norm(np.ravel(x), _VECTOR_ORD[kind]))


# Padé [13/13] coefficients
_PADE13 = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
])
_SCALE_TARGET = 0.5


def mat_exp(M) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a [13/13] Padé approximant.

    The argument is scaled by 2**-s until its 1-norm is at most 0.5, the
    approximant is evaluated and the result squared s times.

    Raises
    ------
    DimensionError
        If ``M`` is not square.
    OverflowError
        If the exponential cannot be represented in double precision.
    """
    M = as_matrix(M)
    _require_square(M)
    n = M.shape[0]
    nrm = np.linalg.norm(M, 1)
    s = 0
    if nrm > _SCALE_TARGET:
        s = int(np.ceil(np.log2(nrm / _SCALE_TARGET)))
    X = M / (2.0 ** s)

    b = _PADE13
    ident = np.eye(n)
    X2 = X @ X
    X4 = X2 @ X2
    X6 = X4 @ X2
    U = X @ (X6 @ (b[13] * X6 + b[11] * X4 + b[9] * X2)
             + b[7] * X6 + b[5] * X4 + b[3] * X2 + b[1] * ident)
    V = (X6 @ (b[12] * X6 + b[10] * X4 + b[8] * X2)
         + b[6] * X6 + b[4] * X4 + b[2] * X2 + b[0] * ident)
    E = np.linalg.solve(V - U, V + U)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            E = E @ E
    if not np.all(np.isfinite(E)):
        raise OverflowError(f"matrix exponential overflows (|M|_1 = {nrm:.3g})")
    return E


class PerturbationGap(NamedTuple):
    gap: float
    bound: float
    holds: bool


def exp_perturbation_gap(Y1, Y2, kind: NormKind | str = NormKind.SPECTRAL) -> PerturbationGap:
    """Compare |exp(Y1 + Y2) - exp(Y1)| with the bound |Y2| exp(|Y1| + |Y2|).

    The weaker variant |Y1| exp(|Y1|) exp(|Y2|) is also evaluated; a
    violation of it is logged but does not affect ``holds``.
    """
    Y1 = as_matrix(Y1, "Y1")
    Y2 = as_matrix(Y2, "Y2")
    _require_square(Y1, "Y1")
    if Y1.shape != Y2.shape:
        raise DimensionError(f"shape mismatch {Y1.shape} vs {Y2.shape}")
    n1, n2 = norm(Y1, kind), norm(Y2, kind)
    gap = norm(mat_exp(Y1 + Y2) - mat_exp(Y1), kind)
    bound = n2 * np.exp(n1 + n2)
    alt = n1 * np.exp(n1) * np.exp(n2)
    if gap > alt:
        log.info("perturbation gap %.6g exceeds |Y1|e^|Y1|e^|Y2| = %.6g", gap, alt)
    return PerturbationGap(gap, float(bound), bool(gap <= bound * (1 + 1e-12)))


def eigvals(M) -> np.ndarray:
    M = as_matrix(M)
    _require_square(M)
    return np.linalg.eigvals(M)


def is_hurwitz(M, margin: float = 0.0) -> bool:
    return bool(np.max(eigvals(M).real) < -margin)


def ctrb(A, B) -> np.ndarray:
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n = A.shape[0]
    cols = [B]
    for _ in range(n - 1):
        cols.append(A @ cols[-1])
    return np.hstack(cols)


def is_controllable(A, B, rtol: float = 1e-9) -> bool:
    sv = np.linalg.svd(ctrb(A, B), compute_uv=False)
    return bool(sv[-1] > rtol * sv[0])


def _conjugate_closed(poles: np.ndarray, tol: float = 1e-9) -> bool:
    rest = list(poles)
    while rest:
        p = rest.pop()
        if abs(p.imag) <= tol:
            continue
        j = int(np.argmin([abs(q - np.conj(p)) for q in rest])) if rest else -1
        if j < 0 or abs(rest[j] - np.conj(p)) > tol * max(1.0, abs(p)):
            return False
        rest.pop(j)
    return True


def pole_place_si(A, B, poles: Sequence[complex]) -> np.ndarray:
    """Single-input state feedback gain ``K`` (1 x n) with spec(A + B K) = poles.

    Ackermann's formula, written for the positive-feedback convention
    u = K x used throughout this package.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    _require_square(A, "A")
    n = A.shape[0]
    if B.shape != (n, 1):
        raise DimensionError(f"B must have shape ({n}, 1), got {B.shape}")
    poles = np.asarray(poles, dtype=complex).ravel()
    if poles.size != n:
        raise ValueError(f"need {n} poles, got {poles.size}")
    if not _conjugate_closed(poles):
        raise ValueError("poles must be closed under complex conjugation")
    if not is_controllable(A, B):
        raise InfeasibleError("(A, B) is not controllable")

    coeffs = np.real(np.poly(poles))
    chi = np.zeros_like(A)
    for c in coeffs:
        chi = chi @ A + c * np.eye(n)
    last_row = np.zeros((1, n))
    last_row[0, -1] = 1.0
    return -last_row @ np.linalg.solve(ctrb(A, B), chi)


def _require_spd(Q: np.ndarray, name: str = "Q") -> None:
    _require_square(Q, name)
    if not np.allclose(Q, Q.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() <= 0:
        raise ValueError(f"{name} must be positive definite")


def lyapunov_solve(H, Q) -> np.ndarray:
    """Solve H^T P + P H = -Q for symmetric P via Kronecker vectorisation."""
    H = as_matrix(H, "H")
    Q = as_matrix(Q, "Q")
    _require_square(H, "H")
    if Q.shape != H.shape:
        raise DimensionError(f"Q shape {Q.shape} does not match H shape {H.shape}")
    _require_spd(Q)
    if not is_hurwitz(H):
        raise InfeasibleError("H is not Hurwitz")
    n = H.shape[0]
    ident = np.eye(n)
    # row-major vec: vec(H^T P) = (H^T kron I) vec(P), vec(P H) = (I kron H^T) vec(P)
    L = np.kron(H.T, ident) + np.kron(ident, H.T)
    P = np.linalg.solve(L, -Q.reshape(-1)).reshape(n, n)
    return 0.5 * (P + P.T)


def lyapunov_residuals(H_list, P, Q) -> list[float]:
    """Largest eigenvalue of H^T P + P H + Q for every H in ``H_list``."""
    out = []
    for H in H_list:
        S = H.T @ P + P @ H + Q
        out.append(float(np.linalg.eigvalsh(0.5 * (S + S.T)).max()))
    return out


def _min_scale(H_list, P0, Q) -> Optional[float]:
    # smallest c with c (H^T P0 + P0 H) + Q <= 0 for every H
    c = 0.0
    for H in H_list:
        L = -(H.T @ P0 + P0 @ H)
        L = 0.5 * (L + L.T)
        if np.linalg.eigvalsh(L).min() <= 0:
            return None
        c = max(c, float(scipy.linalg.eigh(Q, L, eigvals_only=True).max()))
    return c


def common_lyapunov(H_list, Q, tol: float = 1e-9) -> Optional[np.ndarray]:
    """Search for a common P = P^T > 0 with H_i^T P + P H_i + Q <= 0 for all i.

    Candidate directions are the Lyapunov solutions for the element-wise mean
    of ``H_list``, for every individual member and for every pairwise mean of
    those. Each candidate is rescaled to the smallest multiple satisfying all
    inequalities; the admissible candidate with the smallest spectral norm
    wins. Returns ``None`` when no candidate works, which says nothing about
    whether a common P exists.
    """
    H_list = [as_matrix(H, "H") for H in H_list]
    Q = as_matrix(Q, "Q")
    if not H_list:
        raise ValueError("H_list is empty")
    for i, H in enumerate(H_list):
        _require_square(H, f"H[{i}]")
        if H.shape != Q.shape:
            raise DimensionError(f"H[{i}] shape {H.shape} does not match Q {Q.shape}")
        if not is_hurwitz(H):
            raise InfeasibleError(f"H[{i}] is not Hurwitz")
    _require_spd(Q)

    singles = [lyapunov_solve(H, Q) for H in H_list]
    candidates = [lyapunov_solve(np.mean(H_list, axis=0), Q)] + singles
    for i in range(len(singles)):
        for j in range(i + 1, len(singles)):
            candidates.append(0.5 * (singles[i] + singles[j]))

    best = None
    for P0 in candidates:
        c = _min_scale(H_list, P0, Q)
        if c is None:
            continue
        P = c * (1 + 1e-12) * P0
        if max(lyapunov_residuals(H_list, P, Q)) > tol * max(1.0, norm(Q)):
            continue
        if best is None or norm(P) < norm(best):
            best = P
    if best is None:
        log.info("no common Lyapunov matrix found among %d candidates", len(candidates))
    return best
