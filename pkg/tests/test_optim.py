import math

import numpy as np
import pytest

import oracles
from coco_at1p.errors import CalibrationError, ValidationError
from coco_at1p.optim import levenberg_marquardt, simulated_annealing


def quadratic(x):
    return float((x[0] - 1.37) ** 2 + 3.0 * (x[1] - 0.42) ** 2 + 0.5 * (x[0] - 1.37) * (x[1] - 0.42))


def test_anneal_finds_interior_minimum():
    lo, hi = np.array([0.0, 0.0]), np.array([5.0, 1.0])
    res = simulated_annealing(quadratic, lo, hi, seed=3, n_temps=60)
    ref = oracles.grid_search_min(quadratic, lo, hi, 0.01)
    assert np.all(np.abs(res.x - ref) <= 0.1 * np.abs(ref))
    assert np.all((res.x > lo) & (res.x < hi))


def test_anneal_not_worse_than_initial_proposals():
    seen = []

    def f(x):
        c = quadratic(x)
        seen.append(c)
        return c

    res = simulated_annealing(f, [0.0, 0.0], [5.0, 1.0], seed=1, n_temps=5, proposals_per_temp=50)
    assert res.cost <= min(seen[:50])
    assert res.cost == min(seen)


def test_anneal_degenerate_box():
    res = simulated_annealing(quadratic, [2.0, 0.5], [2.0, 0.5], seed=0)
    assert res.x.tolist() == [2.0, 0.5]
    assert res.n_evals == 1


def test_anneal_partly_fixed():
    res = simulated_annealing(quadratic, [0.0, 0.3], [5.0, 0.3], seed=0, n_temps=30)
    assert res.x[1] == 0.3
    assert abs(res.x[0] - 1.37) < 0.1


def test_anneal_is_deterministic():
    a = simulated_annealing(quadratic, [0.0, 0.0], [5.0, 1.0], seed=42, n_temps=20)
    b = simulated_annealing(quadratic, [0.0, 0.0], [5.0, 1.0], seed=42, n_temps=20)
    assert np.array_equal(a.x, b.x) and a.cost == b.cost
    c = simulated_annealing(quadratic, [0.0, 0.0], [5.0, 1.0], seed=43, n_temps=20)
    assert not np.array_equal(a.x, c.x)


def test_anneal_initial_temperature_targets_acceptance():
    res = simulated_annealing(quadratic, [0.0, 0.0], [5.0, 1.0], seed=7, n_temps=3)
    assert res.initial_temperature > 0
    assert 0.3 < res.acceptance_first_level <= 1.0


def test_anneal_rejects_bad_bounds():
    with pytest.raises(ValidationError):
        simulated_annealing(quadratic, [1.0, 0.0], [0.0, 1.0], seed=0)
    with pytest.raises(ValidationError):
        simulated_annealing(quadratic, [0.0, 0.0], [math.inf, 1.0], seed=0)
    with pytest.raises(ValidationError):
        simulated_annealing(quadratic, [0.0], [1.0, 1.0], seed=0)


def test_anneal_tolerates_undefined_regions():
    def f(x):
        return math.nan if x[0] < 0.5 else quadratic(x)

    res = simulated_annealing(f, [0.0, 0.0], [5.0, 1.0], seed=2, n_temps=30)
    assert math.isfinite(res.cost) and res.x[0] >= 0.5


def rosenbrock(x):
    return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])


def test_lm_rosenbrock():
    res = levenberg_marquardt(rosenbrock, [-1.2, 1.0])
    assert res.converged
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)
    assert res.cost < 1e-12


def test_lm_fixed_point():
    res = levenberg_marquardt(rosenbrock, [1.0, 1.0])
    assert res.converged and res.n_iter == 0 and res.cost == 0.0


def test_lm_non_finite_start():
    with pytest.raises(CalibrationError):
        levenberg_marquardt(lambda x: np.array([math.nan]), [0.0])


def test_lm_iteration_cap():
    res = levenberg_marquardt(rosenbrock, [-1.2, 1.0], max_iter=2)
    assert not res.converged and res.n_iter == 2


def test_lm_never_increases_cost():
    start = np.array([-1.2, 1.0])
    r0 = rosenbrock(start)
    for it in (1, 2, 5, 10):
        assert levenberg_marquardt(rosenbrock, start, max_iter=it).cost <= float(r0 @ r0)


def test_lm_linear_least_squares():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((12, 3))
    b = rng.standard_normal(12)
    res = levenberg_marquardt(lambda x: A @ x - b, np.zeros(3))
    np.testing.assert_allclose(res.x, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-7)
