"""Acceptance criteria, one test per criterion.

Every test prints a single ``criterion N: PASS|FAIL ...`` line carrying the
measured quantity next to the required tolerance; the same lines are
repeated in the pytest terminal summary. Run standalone with
``python tests/test_acceptance.py``.
"""

import functools
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import A1, A2, B1, B2, K_BAR  # noqa: E402

from switchdelay.analysis import (  # noqa: E402
    bound_constants,
    certificate,
    envelope_check,
    mismatch_bound_check,
    norm_equivalence_check,
    tk_bound,
)
from switchdelay.control import exact_predictor, make_controller, mean_system  # noqa: E402
from switchdelay.linalg import (  # noqa: E402
    exp_perturbation_gap,
    is_controllable,
    pole_place_si,
)
from switchdelay.plant import Plant, simulate  # noqa: E402
from switchdelay.scenario import compare, load_scenario  # noqa: E402
from switchdelay.switching import random_signal  # noqa: E402

RESULTS: dict[int, str] = {}


def report(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    return ok


def ref_plant(D=1.0):
    K1 = pole_place_si(A1, B1, [-1, -2])
    K2 = pole_place_si(A2, B2, [-1, -2])
    return Plant.from_matrices([A1, A2], [B1, B2], [K1, K2], D)


# -- 1, 2, 3: reference plant constants -----------------------------------


def check_1():
    t0 = time.perf_counter()
    K1 = pole_place_si(A1, B1, [-1, -2])
    K2 = pole_place_si(A2, B2, [-1, -2])
    A_bar, B_bar = mean_system(ref_plant())
    K_bar = pole_place_si(A_bar, B_bar, [-1, -2])
    dt = time.perf_counter() - t0
    e1 = np.abs(K1 - [[-12, -6]]).max()
    e2 = np.abs(K2 - [[-12.6961, -6.3725]]).max()
    e3 = np.abs(K_bar - [[-12.3515, -6.1881]]).max()
    ok = e1 <= 1e-9 and e2 <= 1e-3 and e3 <= 1e-3 and dt < 1.0
    return ok, (f"|K1 err| {e1:.2e} (<=1e-9), |K2 err| {e2:.2e} (<=1e-3), "
                f"|K_bar err| {e3:.2e} (<=1e-3), {dt:.3f} s (<1 s)")


def check_2():
    t0 = time.perf_counter()
    eps = bound_constants(ref_plant(), 0.2, "spectral").eps
    dt = time.perf_counter() - t0
    ok = abs(eps - 0.7895) <= 1e-3 and dt < 1.0
    return ok, f"eps {eps:.6f} (0.7895 +- 1e-3), {dt:.3f} s (<1 s)"


def check_3():
    cert = certificate(ref_plant(), 0.2, "spectral")
    es = cert.eps_star
    ok = cert.available and 1e-6 <= es <= 1e-3 and es < 1e-2 * cert.eps
    return ok, (f"eps* {es:.3e} (required in [1e-6, 1e-3]), eps {cert.eps:.4f}, "
                f"eps*/eps {es / cert.eps:.1e}, available {cert.available}")


# -- 4: exact predictor against the simulated future -------------------------


def random_plant(rng, n, modes):
    As, Bs, Ks = [], [], []
    while len(As) < modes:
        A = rng.uniform(-1.0, 1.0, size=(n, n))
        B = rng.uniform(-1.0, 1.0, size=(n, 1))
        if not is_controllable(A, B):
            continue
        poles = -np.sort(rng.uniform(0.5, 3.0, size=n))
        if np.min(np.diff(np.sort(poles))) < 0.1:
            continue
        As.append(A)
        Bs.append(B)
        Ks.append(pole_place_si(A, B, poles))
    return Plant.from_matrices(As, Bs, Ks, 1.0)


def predictor_error(plant, sig, h, T):
    tr = simulate(plant, sig, make_controller("averaged", plant), rng_x0(plant), 0.0, T=T, h=h)
    snap = sig.snapped(h)
    N = tr.N
    worst = 0.0
    for j in range(len(tr) - N):
        p = exact_predictor(plant, snap, float(tr.times[j]), tr.states[j], tr.history_at(j))
        worst = max(worst, float(np.abs(p.vector - tr.states[j + N]).max()))
    return worst, float(np.abs(tr.states).max())


def rng_x0(plant):
    return np.linspace(-1.0, 1.0, plant.n) if plant.n > 1 else np.ones(1)


def check_4():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    T = 2.0
    worst_coarse = worst_fine = 0.0
    for k in range(20):
        n = int(rng.integers(2, 4))
        modes = int(rng.integers(2, 4))
        plant = random_plant(rng, n, modes)
        sig = random_signal(1000 + k, 0.2, T, modes)
        e1, s1 = predictor_error(plant, sig, 1e-3, T)
        e2, s2 = predictor_error(plant, sig, 5e-4, T)
        worst_coarse = max(worst_coarse, e1 / s1)
        worst_fine = max(worst_fine, e2 / s2)
    dt = time.perf_counter() - t0
    ok = worst_coarse <= 1e-3 and worst_fine <= 5.5e-4 and dt < 60
    return ok, (f"max |P - X(t+D)| / max|X|: {worst_coarse:.2e} at h=1e-3 (<=1e-3), "
                f"{worst_fine:.2e} at h=5e-4 (<=5.5e-4), {dt:.1f} s (<60 s)")


# -- 5, 6: properties along the suite trajectories ----------------------------


def admissible_plant():
    """Two stable-ish modes whose difference is shrunk until eps < eps*.

    Shrinking continues until mu > 0 as well: just below eps* the literal
    decay rate can still be negative.
    """
    A = np.array([[-1.0, 0.5], [0.0, -1.2]])
    B = np.array([[0.0], [1.0]])
    K = np.array([[-0.05, -0.1]])
    dA = np.array([[0.0, 0.1], [0.1, 0.0]])
    s = 1.0
    while s > 1e-6:
        plant = Plant.from_matrices([A, A + s * dA], [B, B * (1 + 0.1 * s)],
                                    [K, K * (1 + 0.1 * s)], 1.0)
        cert = certificate(plant, 0.2)
        if cert.available and cert.admissible and cert.mu > 0:
            return plant, cert, s
        s /= 2
    raise RuntimeError("no admissible scaling found")


@functools.lru_cache(maxsize=None)
def suite_trajectories():
    """(name, plant, trajectory) triples carrying the W channel."""
    out = []
    plant = ref_plant()
    for seed in (0, 1):
        sig = random_signal(seed, 0.2, 7.0, 2)
        for kind in ("averaged", "single:0", "single:1", "avg_system", "exact"):
            ctl = make_controller(kind, plant, sig, 2e-3, K_bar=K_BAR)
            tr = simulate(plant, sig, ctl, [-1, 1], 0.0, T=6.0, h=2e-3, diagnostics=("w",))
            out.append((f"ref/{kind}/seed{seed}", plant, tr))
    twin = Plant.from_matrices([A1, A1], [B1, B1], [plant.modes[0].K] * 2, 1.0)
    sig = random_signal(3, 0.2, 7.0, 2)
    tr = simulate(twin, sig, make_controller("averaged", twin), [-1, 1], 0.0, T=6.0, h=2e-3,
                  diagnostics=("w",))
    out.append(("twin/averaged", twin, tr))
    adm, _, _ = admissible_plant()
    for seed in range(3):
        sig = random_signal(50 + seed, 0.2, 9.0, 2)
        tr = simulate(adm, sig, make_controller("averaged", adm), [1, -1],
                      lambda th: 0.3 * np.sin(2 * th), T=8.0, h=1e-2, diagnostics=("w",))
        out.append((f"admissible/seed{50 + seed}", adm, tr))
    return tuple(out)


def check_5():
    failures, worst = [], 0.0
    for name, plant, tr in suite_trajectories():
        lhs, rhs, ok = mismatch_bound_check(bound_constants(plant, 0.2), tr)
        mask = rhs > 0
        if mask.any():
            worst = max(worst, float(np.max(lhs[mask] / rhs[mask])))
        if not ok:
            failures.append(name)
    n = len(suite_trajectories())
    return not failures, (f"{n} trajectories, worst |W| / (lambda(eps)(|X| + int|U|)(1+10h)) "
                          f"{worst:.3e} (<=1){'; failing: ' + ', '.join(failures) if failures else ''}")


def check_6():
    failures, r1, r2 = [], 0.0, 0.0
    for name, plant, tr in suite_trajectories():
        out = norm_equivalence_check(bound_constants(plant, 0.2), tr)
        r1, r2 = max(r1, out["nu1_ratio"]), max(r2, out["nu2_ratio"])
        if not out["ok"]:
            failures.append(name)
    return not failures, (f"worst nu1 ratio {r1:.3e}, worst nu2 ratio {r2:.3e} (both <=1 at "
                          f"every t >= D){'; failing: ' + ', '.join(failures) if failures else ''}")


# -- 7, 8: randomized inequalities ---------------------------------------------


def check_7():
    rng = np.random.default_rng(7)
    worst, bad = 0.0, 0
    for _ in range(1000):
        n = int(rng.integers(1, 4))
        modes = int(rng.integers(2, 5))
        A_list = [rng.uniform(-2, 2, size=(n, n)) for _ in range(modes)]
        k = int(rng.integers(1, 7))
        D = float(rng.uniform(0.1, 2.0))
        offsets = np.concatenate([[0.0], np.sort(rng.uniform(0, D, size=k - 1)), [D]])
        seq = rng.integers(0, modes, size=k)
        T, bound = tk_bound(A_list, seq, offsets, int(rng.integers(0, modes)), D=D)
        if bound > 0:
            worst = max(worst, T / bound)
        bad += T > bound * (1 + 1e-12) + 1e-14
    return bad == 0, f"1000 cases, {bad} violations, worst T_k / bound {worst:.3e} (<=1)"


def check_8():
    rng = np.random.default_rng(8)
    worst, bad = 0.0, 0
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        Y1, Y2 = rng.normal(size=(2, n, n))
        Y1 *= rng.uniform(0, 3) / max(np.linalg.norm(Y1, 2), 1e-300)
        Y2 *= rng.uniform(0, 3) / max(np.linalg.norm(Y2, 2), 1e-300)
        g = exp_perturbation_gap(Y1, Y2, "spectral")
        if g.bound > 0:
            worst = max(worst, g.gap / g.bound)
        bad += not g.holds
    return bad == 0, f"1000 pairs with norms <= 3, {bad} violations, worst gap / bound {worst:.3e} (<=1)"


# -- 9: qualitative reproduction -------------------------------------------------


def check_9():
    t0 = time.perf_counter()
    sc = load_scenario("paper_fig2")
    sc6 = load_scenario("paper_fig6")
    rows = {r.controller: r for r in compare(sc, ["averaged", "single:0", "single:1"])}
    rows["avg_system"] = compare(sc6, ["avg_system"])[0]
    dt = time.perf_counter() - t0
    avg, bar = rows["averaged"], rows["avg_system"]
    singles = [rows["single:0"], rows["single:1"]]
    beats_singles = all(s.diverged or (avg.ise < s.ise and bar.ise < s.ise) for s in singles)
    ok = avg.settled and avg.ise < bar.ise and beats_singles and dt < 30
    table = ", ".join(f"{k} ISE {v.ise:.4g}{' (diverged)' if v.diverged else ''}"
                      for k, v in rows.items())
    tail = float(np.max(sc.simulate().state_norms()[int(0.9 * sc.T / sc.h):]))
    return ok, (f"paper_fig2 settled {str(avg.settled).lower()} (max |X| over last 10% "
                f"{tail:.3e}, need <1e-2); ISE(averaged) < ISE(avg_system) "
                f"{str(avg.ise < bar.ise).lower()}; both below single-mode "
                f"{str(beats_singles).lower()}; {table}; {dt:.1f} s (<30 s)")


# -- 10: identical modes ----------------------------------------------------------


def check_10():
    K = pole_place_si(A1, B1, [-1, -2])
    twin = Plant.from_matrices([A1, A1], [B1, B1], [K, K], 1.0)
    A_bar, B_bar = mean_system(twin)
    K_bar = pole_place_si(A_bar, B_bar, [-1, -2])
    sig = random_signal(11, 0.2, 7.0, 2)
    inputs, worst_w = {}, 0.0
    for kind in ("averaged", "single:0", "single:1", "avg_system"):
        ctl = make_controller(kind, twin, K_bar=K_bar)
        tr = simulate(twin, sig, ctl, [-1, 1], 0.0, T=6.0, h=1e-3, diagnostics=("w",))
        inputs[kind] = tr.inputs.tobytes()
        worst_w = max(worst_w, float(np.abs(tr.diagnostics["w"]).max()))
    identical = len(set(inputs.values())) == 1
    ok = identical and worst_w <= 1e-10
    return ok, (f"U sequences byte-identical across 4 causal controllers "
                f"{str(identical).lower()}; max |W| {worst_w:.2e} (<=1e-10)")


# -- 11: exponential envelope ------------------------------------------------------


def check_11():
    plant, cert, s = admissible_plant()
    worst = 0.0
    for seed in range(10):
        sig = random_signal(200 + seed, 0.2, 11.0, 2)
        tr = simulate(plant, sig, make_controller("averaged", plant), [1, -1],
                      lambda th: 0.3 * np.sin(2 * th), T=10.0, h=1e-2)
        worst = max(worst, envelope_check(cert, tr)["envelope_ratio"])
    ok = cert.admissible and cert.xi > 0 and worst <= 1.0
    return ok, (f"scale {s:g}: eps {cert.eps:.3e} < eps* {cert.eps_star:.3e}, rho {cert.rho:.4g}, "
                f"xi {cert.xi:.4g}; 10 signals, worst lhs / envelope {worst:.3e} (<=1)")


CHECKS = {i: globals()[f"check_{i}"] for i in range(1, 12)}


@pytest.mark.parametrize("number", sorted(CHECKS))
def test_criterion(number):
    ok, detail = CHECKS[number]()
    assert report(number, ok, detail), RESULTS[number]


if __name__ == "__main__":
    failed = 0
    for i, fn in CHECKS.items():
        ok, detail = fn()
        failed += not report(i, ok, detail)
    sys.exit(1 if failed else 0)
