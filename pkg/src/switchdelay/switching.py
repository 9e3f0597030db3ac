"""Dwell-time switching signals and their restriction to delay windows."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

_EPS_TIME = 1e-12


class DwellTimeError(ValueError):
    pass


@dataclass(frozen=True)
class SwitchingSignal:
    """Right-continuous piecewise-constant mode signal on [0, horizon].

    ``events`` is a sequence of ``(instant, mode)`` pairs; the first instant
    must be 0, instants increase by at least ``tau_d`` and consecutive modes
    differ.
    """

    events: tuple[tuple[float, int], ...]
    horizon: float
    mode_count: int
    tau_d: float
    _instants: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        events = tuple((float(t), int(m)) for t, m in self.events)
        object.__setattr__(self, "events", events)
        if not events:
            raise ValueError("switching signal needs at least one event")
        if events[0][0] != 0.0:
            raise ValueError(f"first event must be at t=0, got {events[0][0]}")
        if self.tau_d <= 0:
            raise ValueError("dwell time must be positive")
        if self.mode_count < 1:
            raise ValueError("mode_count must be >= 1")
        for k, (t, m) in enumerate(events):
            if not 0 <= m < self.mode_count:
                raise ValueError(f"event {k}: mode {m} outside 0..{self.mode_count - 1}")
            if t > self.horizon:
                raise ValueError(f"event {k} at t={t} lies beyond horizon {self.horizon}")
            if k == 0:
                continue
            t_prev, m_prev = events[k - 1]
            if m == m_prev:
                raise ValueError(f"event {k}: vacuous switch to the same mode {m}")
            if t - t_prev < self.tau_d - _EPS_TIME:
                raise DwellTimeError(
                    f"events {k - 1} and {k} are {t - t_prev:.6g} s apart, "
                    f"dwell time is {self.tau_d:.6g} s")
        object.__setattr__(self, "_instants", tuple(t for t, _ in events))

    @property
    def switch_times(self) -> tuple[float, ...]:
        return self._instants[1:]

    def mode_at(self, t: float) -> int:
        """Active mode at ``t``; a switch within 1e-12 s of ``t`` counts as taken."""
        if t < -_EPS_TIME or t > self.horizon + _EPS_TIME:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        k = max(bisect.bisect_right(self._instants, t + _EPS_TIME) - 1, 0)
        return self.events[k][1]

    def snapped(self, h: float) -> "SwitchingSignal":
        """Copy with every switch instant moved down to the grid ``j * h``.

        The dwell time of the copy is relaxed by one step to absorb the
        rounding.
        """
        events = [(math.floor(t / h + 1e-9) * h, m) for t, m in self.events]
        return SwitchingSignal(tuple(events), self.horizon, self.mode_count,
                               max(self.tau_d - h, h))


@dataclass(frozen=True)
class IntervalDecomposition:
    """Constant-mode pieces of [t, t + D].

    ``offsets`` holds s_0 = 0 < s_1 < ... < s_{k+1} = D and ``modes[i]``
    is active on [t + offsets[i], t + offsets[i+1]).
    """

    t: float
    delay: float
    offsets: tuple[float, ...]
    modes: tuple[int, ...]

    @property
    def switch_count(self) -> int:
        return len(self.modes) - 1

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.offsets[:-1], self.offsets[1:]))


def decompose(sig: SwitchingSignal, t: float, D: float) -> IntervalDecomposition:
    """Split [t, t + D] at the switch instants lying strictly inside (t, t + D)."""
    if t < 0 or D <= 0:
        raise ValueError("need t >= 0 and D > 0")
    if t + D > sig.horizon + _EPS_TIME:
        raise ValueError(f"window [{t}, {t + D}] exceeds horizon {sig.horizon}")
    inst = sig._instants
    lo = bisect.bisect_right(inst, t + _EPS_TIME)
    hi = bisect.bisect_left(inst, t + D - _EPS_TIME)
    offsets = [0.0]
    modes = [sig.mode_at(t)]
    for k in range(lo, hi):
        offsets.append(inst[k] - t)
        modes.append(sig.events[k][1])
    offsets.append(float(D))
    return IntervalDecomposition(float(t), float(D), tuple(offsets), tuple(modes))


def from_events(events: Sequence[Sequence[float]], tau_d: float, horizon: float,
                mode_count: int) -> SwitchingSignal:
    return SwitchingSignal(tuple((float(t), int(m)) for t, m in events), float(horizon),
                           int(mode_count), float(tau_d))


def random_signal(seed: int, tau_d: float, horizon: float, mode_count: int,
                  min_hold: float | None = None) -> SwitchingSignal:
    """Random dwell-time signal; holds are uniform on [min_hold, 3 tau_d]."""
    if tau_d <= 0:
        raise ValueError("tau_d must be positive")
    if mode_count < 1:
        raise ValueError("mode_count must be >= 1")
    min_hold = tau_d if min_hold is None else float(min_hold)
    if min_hold < tau_d:
        raise ValueError("min_hold must be at least tau_d")
    rng = np.random.default_rng(seed)
    mode = int(rng.integers(mode_count))
    events = [(0.0, mode)]
    if mode_count > 1:
        t = 0.0
        while True:
            t += float(rng.uniform(min_hold, max(min_hold, 3 * tau_d)))
            if t > horizon:
                break
            others = [m for m in range(mode_count) if m != mode]
            mode = others[int(rng.integers(len(others)))]
            events.append((t, mode))
    return SwitchingSignal(tuple(events), float(horizon), int(mode_count), float(tau_d))
