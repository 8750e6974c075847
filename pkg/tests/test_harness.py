import itertools
import json
import math

import numpy as np
import pytest

from orderpos import harness as h
from orderpos.diffusion import DiffusionParams


def brute_example1(n, power, stay=0.75):
    """Enumerate every +-1 path of a two-state chain started from (1/2, 1/2)."""
    hstep = 1.0 / math.sqrt(n)
    total = 0.0
    for xs in itertools.product((1, -1), repeat=n):
        prob = 0.5
        for a, b in zip(xs, xs[1:]):
            prob *= stay if a == b else 1.0 - stay
        total += prob * np.prod([(1.0 + x * hstep) ** power for x in xs])
    return total


@pytest.mark.parametrize("power", [1, 2])
def test_example1_exact_moment_matches_enumeration(power):
    assert h.example1_exact_moment(8, power) == pytest.approx(brute_example1(8, power), rel=1e-13)


def test_example1_exact_moment_known_values():
    assert h.example1_exact_moment(8, 1) == pytest.approx(1.8775787353515623, rel=1e-13)
    assert h.example1_exact_moment(8, 2) == pytest.approx(12.14032442867755, rel=1e-13)
    assert h.example1_exact_moment(10_000, 1) == pytest.approx(2.717059428988242, rel=1e-10)
    assert h.example1_exact_moment(10_000, 2) == pytest.approx(147.5784759361233, rel=1e-10)


def test_example1_exact_moment_large_n_limits():
    # the second moment tends to e^5, the first to e^1
    assert h.example1_exact_moment(10 ** 7, 2) == pytest.approx(math.exp(5.0), rel=1e-3)
    assert h.example1_exact_moment(10 ** 7, 1) == pytest.approx(math.e, rel=1e-4)


def test_batch_mean_se_matches_direct_computation():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1000, 2))
    mean, se = h.batch_mean_se(x, batches=50)
    np.testing.assert_allclose(mean, x.mean(axis=0), rtol=1e-13)
    means = x.reshape(50, 20, 2).mean(axis=1)
    np.testing.assert_allclose(se, means.std(axis=0, ddof=1) / math.sqrt(50), rtol=1e-12)


def test_batch_mean_se_uneven_groups_weighted_mean():
    x = np.arange(1013, dtype=float)
    mean, _ = h.batch_mean_se(x)
    assert mean == pytest.approx(x.mean(), rel=1e-14)


def test_batch_mean_se_needs_enough_rows():
    with pytest.raises(ValueError):
        h.batch_mean_se(np.zeros(99))


def test_dumps_is_deterministic_and_round_trips():
    obj = {"b": np.float64(0.1), "a": [np.int64(3), (1.0, 2.5)], "m": np.eye(2)}
    text = h.dumps(obj)
    assert text == h.dumps(obj)
    back = json.loads(text)
    assert back["b"] == 0.1 and back["a"] == [3, [1.0, 2.5]] and back["m"] == [[1.0, 0.0], [0.0, 1.0]]


def test_report_json_excludes_timing_by_default():
    rep = h.ExperimentReport("x", {}, {})
    rep.check("a", True, "tol")
    rep.check("b", False, "tol", hard=False)
    rep.wall_clock = 12.5
    assert rep.passed
    d = json.loads(rep.to_json())
    assert "wall_clock" not in d and d["checks"]["b"] == {"passed": False, "tolerance": "tol", "hard": False}
    assert json.loads(rep.to_json(timing=True))["wall_clock"] == 12.5
    rep.check("c", False, "tol")
    assert not rep.passed
    assert rep.to_text().startswith("[FAIL]")


SMALL = [
    lambda s, w: h.fluid_convergence_experiment(paths=3, n_list=(100, 1000), seed=s, workers=w),
    lambda s, w: h.covariance_experiment(n=100, paths=1000, seed=s, workers=w),
    lambda s, w: h.hitting_probability_experiment(h.SQRT3, paths=2000, seed=s, workers=w),
    lambda s, w: h.hitting_probability_experiment(h.SYMMETRIC, paths=500, seed=s, workers=w,
                                                  method="euler", times=(0.1, 0.5), dt=1e-3,
                                                  check_decrease=False),
    lambda s, w: h.tau_fluctuation_experiment(n=200, paths=300, seed=s, workers=w),
    lambda s, w: h.example1_demo(paths=2000, n=1000, seed=s, workers=w),
]


@pytest.mark.parametrize("k", range(len(SMALL)))
def test_reports_reproducible_across_seeds_and_workers(k):
    a = SMALL[k](11, 1).to_json()
    assert a == SMALL[k](11, 1).to_json()
    assert a == SMALL[k](11, 2).to_json()
    assert a != SMALL[k](12, 1).to_json()


def test_small_covariance_and_hitting_pass():
    assert h.covariance_experiment(n=100, paths=2000, seed=1).passed
    assert h.hitting_probability_experiment(h.SQRT3, paths=5000, seed=1).passed


def test_hitting_targets_match_known_values():
    rep = h.hitting_probability_experiment(h.SYMMETRIC, paths=1000, seed=0)
    assert rep.targets["p_decrease"] == pytest.approx(0.5, abs=1e-9)
    rep = h.hitting_probability_experiment(h.SQRT3, paths=1000, seed=0)
    assert rep.targets["p_decrease"] == pytest.approx(1.0 / 3.0, abs=1e-9)


def test_censored_paths_widen_only_the_upper_side():
    # a short horizon censors most paths; the bracket must still contain the target
    rep = h.hitting_probability_experiment(h.SYMMETRIC, paths=2000, seed=0, method="euler",
                                           times=(0.05,), dt=1e-3, t_max=0.3)
    st = rep.statistics
    assert st["censored_fraction"] > 0.3
    assert st["p_decrease"] < 0.5
    assert rep.checks["p_decrease"][0]


def test_tau_experiment_sigma_target():
    rep = h.tau_fluctuation_experiment(n=200, paths=300, seed=0, depletion_sides=())
    assert rep.targets["sigma_y2"] == pytest.approx(176.6849, abs=1e-3)
    assert rep.statistics["invariant_violations"] == 0


def test_example1_targets():
    rep = h.example1_demo(paths=2000, n=1000, seed=0)
    assert rep.targets["second_moment_correct_limit"] == pytest.approx(math.exp(5.0))
    assert rep.targets["second_moment_naive_limit"] == pytest.approx(math.exp(3.0))
    assert rep.passed


def test_one_sided_marks_moves_one_side_onto_ask_slots():
    from orderpos.order_flow import MarkModel, mean_vector
    m = MarkModel.from_mean_vector((1, .6, .8, 1, .7, .8))
    for side, ref in (("bid", [1, .6, .8]), ("ask", [1, .7, .8])):
        sub, share = h.one_sided_marks(m, side)
        assert share == pytest.approx(0.5)
        v = mean_vector(sub)
        np.testing.assert_allclose(v[:3], 0.0)
        # the thinned stream at rate lam * share reproduces the side's mean flow
        np.testing.assert_allclose(share * v[3:], ref, rtol=1e-14)


def test_run_suite_rejects_unknown_name():
    with pytest.raises(ValueError):
        h.run_suite("nope")


def test_unknown_diffusion_method_rejected():
    with pytest.raises(ValueError):
        h.hitting_probability_experiment(DiffusionParams((0, 0), 1, 1, 0, 1, 1), paths=200,
                                         method="bogus")
