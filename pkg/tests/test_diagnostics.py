import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stemfl.diagnostics import (
    consensus,
    drift,
    finite_diff_check,
    first_hit,
    fixed_order_mean,
    gradient_error,
    ifo_to_eps,
    is_stationary,
    potential,
    rounds_to_eps,
)
from stemfl.engine import RunRecord, run_stem
from stemfl.problems import (
    intra_node_variance,
    least_squares_from_offsets,
    make_least_squares,
    make_logistic_nonconvex,
    measure_profile,
)
from stemfl.schedules import practical_schedule


def synthetic_record(grad_norms, rounds=None, ifo=None):
    n = len(grad_norms)
    rounds = list(range(n)) if rounds is None else rounds
    ifo = [10 * r for r in range(n)] if ifo is None else ifo
    rows = [{"t": i + 1, "grad_norm_sq": g, "round": r, "ifo_total": c}
            for i, (g, r, c) in enumerate(zip(grad_norms, rounds, ifo))]
    return RunRecord("stem", rows=rows, iterates=[np.zeros(1)] * n)


def test_consensus_two_points():
    assert consensus([[0.0], [2.0]]) == 2.0
    assert consensus([[1.0, 2.0]] * 5) == 0.0


def test_drift_against_given_center():
    assert drift([[1.0], [3.0]], d_bar=np.array([0.0])) == 10.0
    assert drift([[1.0], [3.0]]) == 2.0


def test_fixed_order_mean_matches_mean():
    rng = np.random.default_rng(0)
    rows = rng.standard_normal((7, 3))
    np.testing.assert_allclose(fixed_order_mean(rows), rows.mean(axis=0), rtol=1e-14)
    same = [rows[0]] * 6
    np.testing.assert_array_equal(fixed_order_mean(same), rows[0])


def test_rounds_to_eps_crosses_at_round_seven():
    g = [1.0, 0.8, 0.5, 0.3, 0.2, 0.15, 0.12, 0.09, 0.2, 0.05]
    rec = synthetic_record(g, rounds=list(range(10)))
    assert rounds_to_eps(rec, 0.1) == 7
    assert ifo_to_eps(rec, 0.1) == 70
    assert rounds_to_eps(rec, 1e-3) is None
    assert first_hit(rec, 0.1, "t") == 8


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30), st.floats(1e-3, 5), st.floats(1e-3, 5))
def test_rounds_to_eps_monotone(g, e1, e2):
    rec = synthetic_record(g)
    lo, hi = sorted((e1, e2))
    r_lo, r_hi = rounds_to_eps(rec, lo), rounds_to_eps(rec, hi)
    if r_lo is not None:
        assert r_hi is not None and r_hi <= r_lo


def test_eps_must_be_positive():
    with pytest.raises(ValueError):
        rounds_to_eps(synthetic_record([1.0]), 0.0)


def test_finite_diff_quadratic_and_affine():
    p = make_least_squares(4, 2, 5, hetero_shift=1.0, noise=1.0, seed=0)
    pts = [np.random.default_rng(i).standard_normal(4) for i in range(3)]
    assert finite_diff_check(p, pts) <= 1e-9
    flat = least_squares_from_offsets(np.zeros((3, 3)), [[1.0, -2.0, 0.5]], n_per_worker=4, noise=0.3)
    assert finite_diff_check(flat, [np.zeros(3), np.ones(3)], h=1e-3) <= 1e-12


def test_finite_diff_logistic():
    p = make_logistic_nonconvex(5, 3, 10, class_skew=0.5, reg_lambda=0.3, seed=1)
    pts = [np.random.default_rng(i).standard_normal(5) for i in range(3)]
    assert finite_diff_check(p, pts) <= 1e-5


def test_is_stationary():
    p = least_squares_from_offsets(np.eye(2), [[1.0, 1.0]], n_per_worker=3, noise=0.5)
    assert is_stationary(p, [1.0, 1.0], 1e-20)
    assert not is_stationary(p, [0.0, 0.0], 1.0)


def test_initial_error_enumeration_matches_variance():
    # K = 1, three samples; enumerate every with-replacement batch of size B
    p = least_squares_from_offsets([[1.5, 0.2], [0.2, 0.7]], [[0.5, -1.0]], n_per_worker=3, noise=2.0, seed=4)
    x1 = np.array([0.3, -0.2])
    var = intra_node_variance(p, 0, x1)
    sigma_sq = measure_profile(p, [x1, np.ones(2)]).sigma ** 2
    grad = p.full_gradient(0, x1)
    for B in (1, 2, 3):
        errs = [np.sum((p.sample_gradient(0, x1, list(batch)) - grad) ** 2)
                for batch in itertools.product(range(3), repeat=B)]
        mean_err = float(np.mean(errs))
        assert mean_err == pytest.approx(var / B, abs=1e-12)
        assert mean_err <= sigma_sq / B + 1e-12
    errs1 = [np.sum((p.sample_gradient(0, x1, [i]) - grad) ** 2) for i in range(3)]
    assert float(np.mean(errs1)) == pytest.approx(var, abs=1e-12)


def test_potential_is_linear_in_error():
    base = potential(2.0, 0.0, 4, 2, 1.5, 0.1)
    one = potential(2.0, 1.0, 4, 2, 1.5, 0.1)
    two = potential(2.0, 2.0, 4, 2, 1.5, 0.1)
    assert base == 2.0
    assert two - one == pytest.approx(one - base, rel=1e-14)
    assert one - base == pytest.approx(8 / (64 * 2.25 * 0.1), rel=1e-14)


def test_gradient_error_two_ways():
    p = make_logistic_nonconvex(4, 3, 8, class_skew=0.4, seed=2)
    rng = np.random.default_rng(3)
    xs = rng.standard_normal((3, 4))
    ds = rng.standard_normal((3, 4))
    a = gradient_error(p, xs, ds=ds)
    b = gradient_error(p, xs, d_bar=ds.mean(axis=0))
    direct = ds.mean(axis=0) - np.mean([p.full_gradient(k, xs[k]) for k in range(3)], axis=0)
    assert a == pytest.approx(b, abs=1e-12)
    assert a == pytest.approx(float(direct @ direct), abs=1e-12)


def test_potential_nonincreasing_on_exact_quadratic_descent():
    p = make_least_squares(3, 2, 6, hetero_shift=1.0, noise=1.0, seed=5)
    L = float(np.linalg.eigvalsh(p.shared["A"])[-1])
    s = practical_schedule(0.5 / L, 1.0, 1.0, L, 6, 2, 1, 60)
    rec = run_stem(p, s, exact=True, x0=np.full(3, 4.0))
    assert max(rec.column("e_norm_sq")) <= 1e-24
    phi = rec.column("potential")
    assert np.all(np.diff(phi) <= 1e-12)
