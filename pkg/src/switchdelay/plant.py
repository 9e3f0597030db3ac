"""Fixed-step simulation of dX/dt = A_sigma X + B_sigma U(t - D).

The delayed input is kept in a sampled buffer on the grid ``j * h``; the
control is held constant over each step, so ``U(t - D)`` is an exact
buffer lookup whenever ``D / h`` is an integer.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol, Sequence

import numpy as np

from .linalg import DimensionError, as_matrix, is_controllable, is_hurwitz
from .switching import SwitchingSignal

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e9


class DivergenceError(RuntimeError):
    """State left the finite region; ``state`` is the last finite state."""

    def __init__(self, message: str, state: Optional[np.ndarray] = None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class Mode:
    A: np.ndarray
    B: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = np.asarray(self.B, dtype=float)
        B = as_matrix(B.reshape(-1, 1) if B.ndim == 1 else B, "B")
        K = as_matrix(self.K, "K")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "K", K)

    @property
    def H(self) -> np.ndarray:
        return self.A + self.B @ self.K


@dataclass(frozen=True)
class Plant:
    """Switched plant with scalar input and constant input delay ``D``."""

    modes: tuple[Mode, ...]
    D: float
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        modes = tuple(self.modes)
        object.__setattr__(self, "modes", modes)
        if not modes:
            raise ValueError("plant needs at least one mode")
        if not self.D > 0:
            raise ValueError("delay D must be positive")
        n = modes[0].A.shape[0]
        for i, m in enumerate(modes):
            if m.A.shape != (n, n):
                raise DimensionError(f"mode {i}: A has shape {m.A.shape}, expected ({n}, {n})")
            if m.B.shape != (n, 1):
                raise DimensionError(f"mode {i}: B has shape {m.B.shape}, expected ({n}, 1)")
            if m.K.shape != (1, n):
                raise DimensionError(f"mode {i}: K has shape {m.K.shape}, expected (1, {n})")
            if self.validate:
                if not is_controllable(m.A, m.B):
                    raise ValueError(f"mode {i}: (A, B) is not controllable")
                if not is_hurwitz(m.H):
                    raise ValueError(f"mode {i}: A + B K is not Hurwitz")

    @property
    def n(self) -> int:
        return self.modes[0].A.shape[0]

    @property
    def mode_count(self) -> int:
        return len(self.modes)

    @classmethod
    def from_matrices(cls, A: Sequence, B: Sequence, K: Sequence, D: float,
                      validate: bool = True) -> "Plant":
        return cls(tuple(Mode(a, b, k) for a, b, k in zip(A, B, K)), float(D), validate)


def grid_count(span: float, h: float, what: str = "span") -> int:
    """Number of steps of size ``h`` in ``span``; raises unless it is an integer."""
    if h <= 0:
        raise ValueError("step h must be positive")
    q = span / h
    k = round(q)
    if k < 1 or abs(q - k) > 1e-9 * max(1.0, q):
        raise ValueError(f"step h={h} does not divide {what}={span}")
    return int(k)


@dataclass
class InputHistory:
    """Samples of U on the window [t - D, t].

    ``samples[j]`` is U(t - D + j h) for j = 0..N with N = D / h. The input
    is held constant on each cell, so ``samples[:-1]`` are the cell values;
    while the control at ``t`` is being computed the last entry holds the
    previous value.
    """

    h: float
    samples: np.ndarray
    time: float = 0.0

    @property
    def N(self) -> int:
        return len(self.samples) - 1

    @property
    def delay(self) -> float:
        return self.N * self.h

    @property
    def cells(self) -> np.ndarray:
        return self.samples[:-1]

    def grid(self) -> np.ndarray:
        return self.time - self.delay + self.h * np.arange(self.N + 1)

    @classmethod
    def from_function(cls, u0: Callable[[float], float] | float, D: float, h: float,
                      t: float = 0.0) -> "InputHistory":
        """Sample ``u0`` on the window grid.

        ``u0`` is a constant, a function of theta, or an array of the N + 1
        grid values themselves.
        """
        N = grid_count(D, h, "D")
        theta = t - D + h * np.arange(N + 1)
        if callable(u0):
            samples = np.array([float(u0(s)) for s in theta])
        elif np.ndim(u0) == 1:
            samples = np.array(u0, dtype=float)
            if len(samples) != N + 1:
                raise ValueError(f"initial input needs {N + 1} samples, got {len(samples)}")
        else:
            samples = np.full(N + 1, float(u0))
        return cls(h, samples, t)

    def advanced(self, u_now: float) -> "InputHistory":
        """History one step later, with ``u_now`` held on [t, t + h)."""
        s = np.empty_like(self.samples)
        s[:-2] = self.samples[1:-1]
        s[-2] = u_now
        s[-1] = u_now
        return InputHistory(self.h, s, self.time + self.h)

    def l2_squared(self) -> float:
        return float(self.h * np.dot(self.cells, self.cells))


def quadrature_window(hist: InputHistory, weight, rule: str = "trapezoid") -> np.ndarray:
    """Approximate the integral of weight(theta) U(theta) over [t - D, t].

    ``weight`` is either a callable of theta or an array whose first axis
    runs over the N + 1 grid points. ``rule="trapezoid"`` is the composite
    trapezoid rule on point samples of U. ``rule="hold"`` treats U as held on
    each cell and applies the trapezoid rule to the weight alone, which is
    the consistent choice for sample-and-hold inputs.
    """
    if callable(weight):
        w = np.array([np.asarray(weight(th), dtype=float) for th in hist.grid()])
    else:
        w = np.asarray(weight, dtype=float)
    if w.shape[0] != hist.N + 1:
        raise DimensionError(f"weight has {w.shape[0]} nodes, history has {hist.N + 1}")
    u = hist.samples.reshape((-1,) + (1,) * (w.ndim - 1))
    h = hist.h
    if rule == "trapezoid":
        wu = w * u
        return h * (wu.sum(axis=0) - 0.5 * (wu[0] + wu[-1]))
    if rule == "hold":
        cell_w = 0.5 * (w[:-1] + w[1:])
        return h * (cell_w * u[:-1]).sum(axis=0)
    raise ValueError(f"unknown quadrature rule {rule!r}")


class Controller(Protocol):
    kind: str
    causal: bool

    def __call__(self, t: float, x: np.ndarray, hist: InputHistory) -> float: ...


def rk4(A: np.ndarray, b: np.ndarray, x: np.ndarray, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of dx/dt = A x + b with constant ``b``."""
    k1 = A @ x + b
    k2 = A @ (x + 0.5 * h * k1) + b
    k3 = A @ (x + 0.5 * h * k2) + b
    k4 = A @ (x + h * k3) + b
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(plant: Plant, sig: SwitchingSignal, x, hist: InputHistory, controller: Controller,
         h: float) -> tuple[np.ndarray, InputHistory]:
    """Advance the closed loop from ``hist.time`` to ``hist.time + h``."""
    if abs(h - hist.h) > 1e-15 * max(1.0, h):
        raise ValueError("step size differs from the history grid")
    x = np.asarray(x, dtype=float)
    t = hist.time
    u_now = float(controller(t, x, hist))
    mode = plant.modes[sig.mode_at(t)]
    x_next = rk4(mode.A, mode.B[:, 0] * hist.samples[0], x, h)
    if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > DIVERGENCE_THRESHOLD:
        raise DivergenceError(f"state diverged at t={t + h:.6g}", state=x)
    return x_next, hist.advanced(u_now)


@dataclass
class Trajectory:
    """Closed-loop time series on the grid ``times[j] = j * h``.

    ``u_full[k]`` is the input held on [(k - N) h, (k - N + 1) h), so the
    first N entries are the initial history on [-D, 0).
    """

    h: float
    D: float
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    modes: np.ndarray
    u_full: np.ndarray
    controller: str = ""
    causal: bool = True
    diverged: bool = False
    diagnostics: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.u_full) - len(self.inputs)

    def __len__(self) -> int:
        return len(self.times)

    def history_at(self, j: int) -> InputHistory:
        """The controller's view of the input window at grid index ``j``."""
        N = self.N
        s = np.empty(N + 1)
        s[:N] = self.u_full[j:j + N]
        s[N] = self.u_full[j + N] if j + N < len(self.u_full) else self.u_full[j + N - 1]
        return InputHistory(self.h, s, float(self.times[j]) if j < len(self.times) else j * self.h)

    def state_norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def ise(self) -> float:
        """Integral of |X|^2 over the horizon (trapezoid)."""
        sq = self.state_norms() ** 2
        if len(sq) < 2:
            return 0.0
        return float(self.h * (sq.sum() - 0.5 * (sq[0] + sq[-1])))

    def window_integral(self, values: np.ndarray, j: int, power: int = 1) -> float:
        """Integral over [t_j - D, t_j] of |values|**power for a held signal.

        ``values`` is indexed like ``u_full`` (N history cells first).
        """
        seg = np.abs(values[j:j + self.N]) ** power
        return float(self.h * seg.sum())

    def write_csv(self, path, stride: int = 1, extra: Iterable[str] = ()) -> None:
        n = self.states.shape[1]
        extra = [e for e in extra if e in self.diagnostics]
        header = ["t", "sigma"] + [f"x{i + 1}" for i in range(n)] + ["u"] + list(extra)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for j in range(0, len(self.times), max(1, int(stride))):
                row = [_fmt(self.times[j]), str(int(self.modes[j]))]
                row += [_fmt(v) for v in self.states[j]]
                row.append(_fmt(self.inputs[j]))
                row += [_fmt(self.diagnostics[e][j]) for e in extra]
                w.writerow(row)


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def simulate(plant: Plant, sig: SwitchingSignal, controller: Controller, x0, u0=0.0,
             T: float = 15.0, h: float = 1e-3, diagnostics: Sequence[str] = ()) -> Trajectory:
    """Simulate the closed loop on [0, T].

    Switch instants are snapped down to the grid before the run. ``u0`` is
    the initial input on [-D, 0), either a constant or a function of theta.
    Supported diagnostics: ``"w"`` (backstepping variable, needs the signal
    on [0, T + D]), ``"normx"`` and ``"pred"`` (exact predictor).
    On divergence the partial trajectory is returned with ``diverged=True``.
    """
    N = grid_count(plant.D, h, "D")
    steps = grid_count(T, h, "T")
    if sig.mode_count != plant.mode_count:
        raise ValueError(f"signal has {sig.mode_count} modes, plant has {plant.mode_count}")
    if T > sig.horizon + 1e-12:
        raise ValueError(f"T={T} exceeds the switching horizon {sig.horizon}")
    diagnostics = tuple(diagnostics)
    needs_future = any(d in ("w", "pred") for d in diagnostics)
    if needs_future and T + plant.D > sig.horizon + 1e-9:
        raise ValueError("exact-predictor diagnostics need the signal on [0, T + D]")
    sig = sig.snapped(h)

    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (plant.n,):
        raise DimensionError(f"x0 has {x.size} entries, plant state dimension is {plant.n}")

    hist0 = InputHistory.from_function(u0, plant.D, h, 0.0)
    u_full = np.zeros(N + steps + 1)
    u_full[:N] = hist0.cells
    states = np.zeros((steps + 1, plant.n))
    modes = np.zeros(steps + 1, dtype=int)
    switch_idx = [round(t / h) for t in sig.switch_times]
    mode_seq = [m for _, m in sig.events]

    diverged = False
    last = steps
    k = 0
    current = mode_seq[0]
    for j in range(steps + 1):
        while k < len(switch_idx) and switch_idx[k] <= j:
            k += 1
            current = mode_seq[k]
        states[j] = x
        modes[j] = current
        # controller sees the held previous value in the last slot
        u_full[j + N] = u_full[j + N - 1]
        hist = InputHistory(h, u_full[j:j + N + 1], j * h)
        u = float(controller(j * h, x, hist))
        if not math.isfinite(u):
            diverged, last = True, j
            break
        u_full[j + N] = u
        if j == steps:
            break
        m = plant.modes[current]
        x_next = rk4(m.A, m.B[:, 0] * u_full[j], x, h)
        if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > DIVERGENCE_THRESHOLD:
            log.warning("divergence at t=%.6g under %s", (j + 1) * h,
                        getattr(controller, "kind", "controller"))
            diverged, last = True, j
            break
        x = x_next

    traj = Trajectory(
        h=h, D=plant.D,
        times=h * np.arange(last + 1),
        states=states[:last + 1].copy(),
        inputs=u_full[N:N + last + 1].copy(),
        modes=modes[:last + 1].copy(),
        u_full=u_full[:N + last + 1].copy(),
        controller=getattr(controller, "kind", ""),
        causal=getattr(controller, "causal", True),
        diverged=diverged,
    )
    if "normx" in diagnostics:
        traj.diagnostics["normX"] = traj.state_norms()
    if needs_future and not diverged:
        from .analysis import backstepping_channel

        P, W = backstepping_channel(plant, sig, traj)
        if "w" in diagnostics:
            traj.diagnostics["w"] = W
        if "pred" in diagnostics:
            for i in range(plant.n):
                traj.diagnostics[f"p{i + 1}"] = P[:, i]
    return traj
