import numpy as np
import pytest

from switchdelay.control import ExactPredictorController, ZeroController, make_controller
from switchdelay.linalg import mat_exp
from switchdelay.plant import (
    InputHistory,
    Plant,
    grid_count,
    quadrature_window,
    simulate,
    step,
)
from switchdelay.switching import from_events, random_signal

from conftest import A1, B1, K1


def integrator_plant(D=1.0):
    return Plant.from_matrices([[[0.0]]], [[[1.0]]], [[[-1.0]]], D)


def test_grid_count():
    assert grid_count(1.0, 1e-3) == 1000
    with pytest.raises(ValueError):
        grid_count(1.0, 0.3, "D")


def test_quadrature_zero_history():
    hist = InputHistory.from_function(0.0, 1.0, 0.01)
    out = quadrature_window(hist, lambda th: np.ones((2, 3)))
    assert np.array_equal(out, np.zeros((2, 3)))


@pytest.mark.parametrize("rule", ["trapezoid", "hold"])
def test_quadrature_constant(rule):
    hist = InputHistory.from_function(1.0, 1.0, 0.01)
    assert quadrature_window(hist, lambda th: 1.0, rule) == pytest.approx(1.0, abs=1e-12)


def test_quadrature_second_order():
    # integral of theta e^{-theta} over [-1, 0] is -1
    errs = []
    for h in (0.01, 0.005):
        hist = InputHistory.from_function(lambda th: th, 1.0, h)
        errs.append(abs(quadrature_window(hist, lambda th: np.exp(-th)) + 1.0))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)


def test_quadrature_array_weight_matches_callable():
    hist = InputHistory.from_function(np.sin, 1.0, 0.01)
    w = np.exp(-hist.grid())
    assert quadrature_window(hist, w, "hold") == pytest.approx(
        quadrature_window(hist, np.exp, "hold") * 0 + quadrature_window(
            hist, lambda th: np.exp(-th), "hold"), rel=1e-14)


def test_history_l2_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(50):
        hist = InputHistory(0.01, rng.normal(size=101))
        assert hist.l2_squared() > 0
    assert InputHistory(0.01, np.zeros(101)).l2_squared() == 0


def test_step_equilibrium():
    plant = Plant.from_matrices([A1], [B1], [K1], 1.0)
    sig = from_events([(0, 0)], 0.2, 5, 1)
    hist = InputHistory.from_function(0.0, 1.0, 0.01)
    x, hist2 = step(plant, sig, np.zeros(2), hist, ZeroController(), 0.01)
    assert np.array_equal(x, np.zeros(2))
    assert hist2.time == pytest.approx(0.01)


def test_step_pure_integrator():
    plant = integrator_plant()
    sig = from_events([(0, 0)], 0.2, 5, 1)
    hist = InputHistory.from_function(1.0, 1.0, 0.01)
    x, hist2 = step(plant, sig, np.array([0.5]), hist, ZeroController(), 0.01)
    assert x[0] == pytest.approx(0.51, abs=1e-15)
    assert hist2.samples[-2] == 0.0 and hist2.samples[0] == 1.0


def test_open_loop_matches_matrix_exponential():
    plant = Plant.from_matrices([A1], [B1], [K1], 1.0)
    sig = from_events([(0, 0)], 0.2, 5, 1)
    x0 = np.array([-1.0, 1.0])
    tr = simulate(plant, sig, ZeroController(), x0, 0.0, T=1.0, h=1e-3)
    np.testing.assert_allclose(tr.states[-1], mat_exp(A1) @ x0, atol=1e-6)


def test_grid_exactness():
    plant = integrator_plant()
    sig = from_events([(0, 0)], 0.2, 5, 1)
    tr = simulate(plant, sig, ZeroController(), [0.0], 0.0, T=3.0, h=1e-3)
    assert np.array_equal(tr.times, 1e-3 * np.arange(3001))


def test_zero_initial_data_stays_zero(ref_plant):
    sig = random_signal(2, 0.2, 6.0, 2)
    for kind in ("averaged", "single:0", "single:1", "avg_system"):
        ctl = make_controller(kind, ref_plant, poles=[-1, -2])
        tr = simulate(ref_plant, sig, ctl, [0.0, 0.0], 0.0, T=5.0, h=1e-2)
        assert not np.any(tr.states) and not np.any(tr.inputs)


def test_history_function_sampling(ref_plant):
    sig = from_events([(0, 0)], 0.2, 5, 2)
    tr = simulate(ref_plant, sig, ZeroController(), [0, 0], lambda th: th, T=0.1, h=0.01)
    np.testing.assert_allclose(tr.u_full[:100], -1.0 + 0.01 * np.arange(100))


def test_validation_errors(ref_plant):
    sig = random_signal(0, 0.2, 5.0, 2)
    with pytest.raises(ValueError):
        simulate(ref_plant, sig, ZeroController(), [1, 1], 0.0, T=2.0, h=0.3)
    with pytest.raises(ValueError):
        simulate(ref_plant, sig, ZeroController(), [1, 1], 0.0, T=4.5, h=0.01,
                 diagnostics=("w",))
    with pytest.raises(ValueError):
        Plant.from_matrices([A1], [B1], [[[1.0, 1.0]]], 1.0)  # A + BK unstable


def test_divergence_flagged():
    plant = Plant.from_matrices([A1], [B1], [K1], 1.0)
    sig = from_events([(0, 0)], 0.2, 30, 1)
    tr = simulate(plant, sig, ZeroController(), [1.0, 1.0], 0.0, T=30.0, h=1e-2)
    assert tr.diverged
    assert len(tr) < 3001
    assert np.all(np.isfinite(tr.states))


def test_terminal_state_convergence_order(ref_plant):
    # switch instants on every grid used, so only the step size varies
    sig = from_events([(0, 0), (0.4, 1), (0.8, 0), (1.6, 1), (2.2, 0)], 0.2, 4.0, 2)
    ctl = make_controller("averaged", ref_plant)
    ends = [simulate(ref_plant, sig, ctl, [-1, 1], np.sin, T=3.0, h=h).states[-1]
            for h in (4e-3, 2e-3, 1e-3)]
    e1 = np.linalg.norm(ends[0] - ends[1])
    e2 = np.linalg.norm(ends[1] - ends[2])
    # the held input makes the scheme first order: differences roughly halve
    assert e1 / e2 > 1.8
    assert e2 < 1e-2


def test_exact_feedback_closed_loop_rate():
    plant = Plant.from_matrices([A1], [B1], [K1], 1.0)
    sig = from_events([(0, 0)], 0.2, 12.0, 1)
    ctl = ExactPredictorController(plant, sig, 1e-3)
    tr = simulate(plant, sig, ctl, [-1, 1], 0.0, T=10.0, h=1e-3)
    j0, j1 = int(3.0 / 1e-3), int(10.0 / 1e-3)
    t = tr.times[j0:j1]
    slope = np.polyfit(t, np.log(tr.state_norms()[j0:j1]), 1)[0]
    assert slope == pytest.approx(-1.0, rel=0.05)


def test_csv_export(tmp_path, ref_plant):
    sig = random_signal(1, 0.2, 3.0, 2)
    tr = simulate(ref_plant, sig, make_controller("averaged", ref_plant), [-1, 1], 0.0,
                  T=1.0, h=0.01, diagnostics=("w", "normx"))
    path = tmp_path / "traj.csv"
    tr.write_csv(path, stride=10, extra=("w", "normX"))
    lines = path.read_text().splitlines()
    assert lines[0] == "t,sigma,x1,x2,u,w,normX"
    assert len(lines) == 1 + 11
    assert lines[1].split(",")[:5] == ["0", str(sig.mode_at(0)), "-1", "1",
                                       format(tr.inputs[0], ".9g")]
