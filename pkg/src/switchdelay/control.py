"""Predictor-based controllers for the delayed switched plant.

All predictors share one discretisation: the input is held on grid cells
and the kernel e^{A(t - theta)} B is integrated over each cell with the
trapezoid rule, the kernel values coming from powers of the cached cell
factor e^{A h}.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .linalg import as_matrix, is_hurwitz, mat_exp, pole_place_si
from .plant import InputHistory, Plant, grid_count
from .switching import SwitchingSignal, decompose


class ModePredictor:
    """Frozen-mode state prediction over a delay window of N = D / h cells."""

    def __init__(self, A, B, D: float, h: float):
        self.A = as_matrix(A, "A")
        self.B = as_matrix(B, "B")
        self.D = float(D)
        self.h = float(h)
        self.N = grid_count(D, h, "D")
        self._lock = threading.Lock()
        self._powers: dict[int, np.ndarray] = {}
        self.cell = mat_exp(self.A * self.h)
        self.exp_D = self.exp_cells(self.N)
        # kernel at distance d cells from the window end: e^{A d h} B
        kern = np.empty((self.N + 1, self.A.shape[0]))
        v = self.B[:, 0].copy()
        for d in range(self.N + 1):
            kern[d] = v
            v = self.cell @ v
        cell_w = 0.5 * self.h * (kern[:-1] + kern[1:])
        # oldest cell first
        self.weights = np.ascontiguousarray(cell_w[::-1])

    def exp_cells(self, L: int) -> np.ndarray:
        """e^{A L h}, cached per length."""
        E = self._powers.get(L)
        if E is None:
            with self._lock:
                E = self._powers.get(L)
                if E is None:
                    E = mat_exp(self.A * (L * self.h))
                    self._powers[L] = E
        return E

    def segment(self, cells: np.ndarray) -> np.ndarray:
        """Integral over a run of held cells, weighted to the run's end."""
        L = len(cells)
        if L == 0:
            return np.zeros(self.A.shape[0])
        return cells @ self.weights[self.N - L:]

    def predict(self, x: np.ndarray, cells: np.ndarray) -> np.ndarray:
        return self.exp_D @ x + cells @ self.weights

    def step_cell(self, p: np.ndarray, u: float) -> np.ndarray:
        """Advance a prediction across one held cell."""
        return self.cell @ p + self.weights[-1] * u


@lru_cache(maxsize=256)
def _predictor_cached(A_bytes: bytes, B_bytes: bytes, n: int, D: float, h: float) -> ModePredictor:
    A = np.frombuffer(A_bytes).reshape(n, n)
    B = np.frombuffer(B_bytes).reshape(n, 1)
    return ModePredictor(A, B, D, h)


def mode_predictor(A, B, D: float, h: float) -> ModePredictor:
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float).reshape(-1, 1)
    return _predictor_cached(A.tobytes(), B.tobytes(), A.shape[0], float(D), float(h))


@dataclass(frozen=True)
class PredictorValue:
    vector: np.ndarray
    kind: str


def _check_history(plant: Plant, hist: InputHistory) -> None:
    if abs(hist.delay - plant.D) > 1e-9 * plant.D:
        raise ValueError(f"history covers {hist.delay} s, plant delay is {plant.D} s")


def per_mode_predictor(plant: Plant, i: int, x, hist: InputHistory) -> PredictorValue:
    """e^{A_i D} X(t) + integral of e^{A_i(t - theta)} B_i U(theta) over the window."""
    _check_history(plant, hist)
    m = plant.modes[i]
    pred = mode_predictor(m.A, m.B, plant.D, hist.h)
    return PredictorValue(pred.predict(np.asarray(x, dtype=float), hist.cells), f"per_mode({i})")


def single_mode_control(plant: Plant, i: int, x, hist: InputHistory) -> float:
    return float(plant.modes[i].K[0] @ per_mode_predictor(plant, i, x, hist).vector)


def averaged_control(plant: Plant, x, hist: InputHistory) -> float:
    """Mean over all modes of K_i times the frozen-mode prediction of mode i."""
    total = 0.0
    for i in range(plant.mode_count):
        total += single_mode_control(plant, i, x, hist)
    return total / plant.mode_count


def mean_system(plant: Plant) -> tuple[np.ndarray, np.ndarray]:
    """Element-wise means of the mode matrices A_i and B_i."""
    A = np.mean([m.A for m in plant.modes], axis=0)
    B = np.mean([m.B for m in plant.modes], axis=0)
    return A, B


def average_system_control(A_bar, B_bar, K_bar, x, hist: InputHistory) -> float:
    pred = mode_predictor(A_bar, B_bar, hist.delay, hist.h)
    p = pred.predict(np.asarray(x, dtype=float), hist.cells)
    return float(np.asarray(K_bar, dtype=float).reshape(-1) @ p)


def _cell_bounds(plant: Plant, sig: SwitchingSignal, t: float, h: float):
    dec = decompose(sig, t, plant.D)
    bounds = []
    for s in dec.offsets:
        a = round(s / h)
        if abs(s - a * h) > 1e-9:
            raise ValueError(f"switch at t={t + s} is off the grid h={h}; use sig.snapped(h)")
        bounds.append(a)
    return dec, bounds


def exact_predictor(plant: Plant, sig: SwitchingSignal, t: float, x,
                    hist: InputHistory) -> PredictorValue:
    """X(t + D) built from the switching signal on [t, t + D].

    Walks the constant-mode intervals of [t, t + D] in order, multiplying by
    each interval's exponential and adding its input integral. Switch
    instants must lie on the history grid.
    """
    _check_history(plant, hist)
    dec, bounds = _cell_bounds(plant, sig, t, hist.h)
    cells = hist.cells
    p = np.asarray(x, dtype=float)
    for m, a, b in zip(dec.modes, bounds[:-1], bounds[1:]):
        mode = plant.modes[m]
        pred = mode_predictor(mode.A, mode.B, plant.D, hist.h)
        p = pred.exp_cells(b - a) @ p + pred.segment(cells[a:b])
    return PredictorValue(p, "exact")


def predictor_window(plant: Plant, sig: SwitchingSignal, t: float, x, hist: InputHistory):
    """P(theta) = X(theta + D) at every grid point theta of [t - D, t].

    Returns ``(P, modes)`` where ``P`` has shape (N + 1, n) and ``modes[i]``
    is sigma(theta_i + D) (right-continuous, so ``modes[N]`` is sigma(t + D)).
    """
    _check_history(plant, hist)
    dec, bounds = _cell_bounds(plant, sig, t, hist.h)
    N = hist.N
    P = np.empty((N + 1, plant.n))
    cell_modes = np.empty(N + 1, dtype=int)
    p = np.asarray(x, dtype=float)
    for m, a, b in zip(dec.modes, bounds[:-1], bounds[1:]):
        mode = plant.modes[m]
        pred = mode_predictor(mode.A, mode.B, plant.D, hist.h)
        for c in range(a, b):
            P[c] = p
            cell_modes[c] = m
            p = pred.step_cell(p, hist.cells[c])
    P[N] = p
    cell_modes[N] = sig.mode_at(t + plant.D)
    return P, cell_modes


# -- controller objects -------------------------------------------------------


class AveragedController:
    kind = "averaged"
    causal = True

    def __init__(self, plant: Plant):
        self.plant = plant

    def __call__(self, t, x, hist):
        return averaged_control(self.plant, x, hist)


class SingleModeController:
    causal = True

    def __init__(self, plant: Plant, i: int):
        if not 0 <= i < plant.mode_count:
            raise ValueError(f"mode {i} does not exist (plant has {plant.mode_count} modes)")
        self.plant = plant
        self.i = i
        self.kind = f"single:{i}"

    def __call__(self, t, x, hist):
        return single_mode_control(self.plant, self.i, x, hist)


class AverageSystemController:
    kind = "avg_system"
    causal = True

    def __init__(self, plant: Plant, K_bar=None, poles=None):
        self.A_bar, self.B_bar = mean_system(plant)
        if K_bar is None:
            if poles is None:
                raise ValueError("average-system controller needs K_bar or poles")
            K_bar = pole_place_si(self.A_bar, self.B_bar, poles)
        self.K_bar = as_matrix(K_bar, "K_bar")
        if not is_hurwitz(self.A_bar + self.B_bar @ self.K_bar):
            raise ValueError("A_bar + B_bar K_bar is not Hurwitz")

    def __call__(self, t, x, hist):
        return average_system_control(self.A_bar, self.B_bar, self.K_bar, x, hist)


class ExactPredictorController:
    """U(t) = K_{sigma(t+D)} P(t); uses the future switching signal."""

    kind = "exact"
    causal = False

    def __init__(self, plant: Plant, sig: SwitchingSignal, h: Optional[float] = None):
        self.plant = plant
        self.sig = sig.snapped(h) if h is not None else sig

    def __call__(self, t, x, hist):
        p = exact_predictor(self.plant, self.sig, t, x, hist).vector
        return float(self.plant.modes[self.sig.mode_at(t + self.plant.D)].K[0] @ p)


class ZeroController:
    kind = "zero"
    causal = True

    def __call__(self, t, x, hist):
        return 0.0


def make_controller(spec: str, plant: Plant, sig: Optional[SwitchingSignal] = None,
                    h: Optional[float] = None, K_bar=None, poles=None):
    """Build a controller from ``averaged``, ``single:i``, ``avg_system``, ``exact`` or ``zero``."""
    spec = spec.strip()
    if spec == "averaged":
        return AveragedController(plant)
    if spec.startswith("single:"):
        return SingleModeController(plant, int(spec.split(":", 1)[1]))
    if spec in ("avg_system", "average_system"):
        return AverageSystemController(plant, K_bar=K_bar, poles=poles)
    if spec == "exact":
        if sig is None:
            raise ValueError("the exact-predictor controller needs the switching signal")
        return ExactPredictorController(plant, sig, h)
    if spec == "zero":
        return ZeroController()
    raise ValueError(f"unknown controller kind {spec!r}")
