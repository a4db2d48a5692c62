import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stemfl.errors import ConfigurationError, EstimationError, UsageError
from stemfl.problems import (
    Family,
    least_squares_from_offsets,
    make_least_squares,
    make_logistic_nonconvex,
    make_problem,
    make_two_layer_tanh,
    measure_profile,
    sample_gradient,
)


class Tally:
    def __init__(self):
        self.n = 0

    def charge(self, k, n):
        self.n += n


def small_problems():
    return [
        make_least_squares(4, 3, 7, hetero_shift=1.0, noise=0.5, seed=1),
        make_logistic_nonconvex(5, 3, 9, class_skew=0.6, reg_lambda=0.3, seed=2),
        make_two_layer_tanh(3, 4, 2, 6, hetero_shift=0.5, seed=3),
    ]


def central_diff(fun, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


@pytest.mark.parametrize("p", small_problems(), ids=lambda p: p.family.value)
def test_sample_gradient_matches_finite_differences(p):
    rng = np.random.default_rng(0)
    from stemfl.problems import _LOSSES

    worst = 0.0
    for _ in range(10):
        x = rng.standard_normal(p.dim)
        k = int(rng.integers(p.workers))
        i = int(rng.integers(p.n_samples(k)))

        def f(z):
            return float(_LOSSES[p.family](p, p.datasets[k], z, np.array([i]))[0])

        g = p.sample_gradient(k, x, [i])
        fd = central_diff(f, x)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12))
    assert worst <= 1e-5


@pytest.mark.parametrize("p", small_problems(), ids=lambda p: p.family.value)
def test_size_one_batches_average_to_full_gradient(p):
    # exhaustive enumeration of the empirical distribution
    x = np.random.default_rng(5).standard_normal(p.dim)
    for k in range(p.workers):
        singles = [p.sample_gradient(k, x, [i]) for i in range(p.n_samples(k))]
        np.testing.assert_allclose(np.mean(singles, axis=0), p.full_gradient(k, x), rtol=0, atol=1e-12)


@pytest.mark.parametrize("p", small_problems(), ids=lambda p: p.family.value)
def test_full_batch_and_repeated_batch(p):
    x = np.random.default_rng(6).standard_normal(p.dim)
    n = p.n_samples(0)
    np.testing.assert_array_equal(p.sample_gradient(0, x, np.arange(n)), p.full_gradient(0, x))
    single = p.sample_gradient(0, x, [2])
    np.testing.assert_allclose(p.sample_gradient(0, x, [2] * 5), single, rtol=1e-15, atol=1e-15)


@pytest.mark.parametrize("p", small_problems(), ids=lambda p: p.family.value)
def test_global_gradient_is_worker_mean(p):
    x = np.random.default_rng(7).standard_normal(p.dim)
    direct = sum(p.full_gradient(k, x) for k in range(p.workers)) / p.workers
    np.testing.assert_allclose(p.global_gradient(x), direct, rtol=1e-14, atol=1e-15)
    f, g = p.loss_and_global_gradient(x)
    assert f == pytest.approx(p.loss(x), rel=1e-13)
    np.testing.assert_allclose(g, direct, rtol=1e-12, atol=1e-14)


def test_ifo_counter_charges_batch_size():
    p = small_problems()[1]
    tally = Tally()
    sample_gradient(p, 1, np.zeros(p.dim), [0, 3, 3, 1], counter=tally)
    assert tally.n == 4
    p.full_gradient(1, np.zeros(p.dim))
    p.global_gradient(np.zeros(p.dim))
    assert tally.n == 4


def test_out_of_range_index_is_usage_error():
    p = small_problems()[0]
    with pytest.raises(UsageError):
        p.sample_gradient(0, np.zeros(p.dim), [p.n_samples(0)])
    with pytest.raises(UsageError):
        p.sample_gradient(p.workers, np.zeros(p.dim), [0])


def test_single_worker_global_equals_local():
    p = make_logistic_nonconvex(4, 1, 10, seed=0)
    x = np.ones(4)
    np.testing.assert_array_equal(p.global_gradient(x), p.full_gradient(0, x))


# least squares -----------------------------------------------------------------


def test_homogeneous_noise_free_least_squares_has_zero_sigma_and_zeta():
    p = make_least_squares(3, 4, 5, hetero_shift=0.0, noise=0.0, seed=0)
    rng = np.random.default_rng(0)
    prof = measure_profile(p, [rng.standard_normal(3) for _ in range(4)])
    assert prof.sigma == 0.0
    assert prof.zeta == 0.0


def test_single_sample_worker_has_zero_sigma():
    p = make_least_squares(3, 2, 1, hetero_shift=1.0, noise=0.0, seed=0)
    prof = measure_profile(p, [np.zeros(3), np.ones(3)])
    assert prof.sigma == 0.0


def test_constructed_offsets_give_exact_zeta():
    p = least_squares_from_offsets(np.eye(2), [[0.0, 0.0], [3.0, 4.0]], n_per_worker=6, noise=0.7, seed=3)
    rng = np.random.default_rng(1)
    probes = [10 * rng.standard_normal(2) for _ in range(8)]
    from stemfl.problems import inter_node_spread

    spreads = [inter_node_spread(p, x) for x in probes]
    assert max(abs(z - 5.0) for z in spreads) <= 1e-10
    assert max(spreads) - min(spreads) <= 1e-10
    assert measure_profile(p, probes).zeta == pytest.approx(5.0, abs=1e-10)


def test_least_squares_stationary_point():
    p = least_squares_from_offsets([[2.0, 0.0], [0.0, 1.0]], [[2.0, 3.0]], n_per_worker=4, noise=1.0)
    x = np.array([1.0, 3.0])
    np.testing.assert_allclose(p.full_gradient(0, x), 0.0, atol=1e-14)


def test_least_squares_lipschitz_is_top_eigenvalue():
    # per-sample Hessian is the shared design matrix, so L = lambda_max(A)
    p = make_least_squares(4, 2, 5, hetero_shift=1.0, noise=1.0, seed=4)
    A = p.shared["A"]
    w, V = np.linalg.eigh(A)
    top = V[:, -1]
    prof = measure_profile(p, [np.zeros(4), top], probe_pairs=[(np.zeros(4), 3 * top), (top, -top)])
    assert prof.L_hat == pytest.approx(w[-1], abs=1e-8)


def test_sigma_zero_iff_identical_sample_gradients():
    degenerate = least_squares_from_offsets(np.eye(2), [[1.0, 1.0], [0.0, 2.0]], n_per_worker=5, noise=0.0)
    noisy = least_squares_from_offsets(np.eye(2), [[1.0, 1.0], [0.0, 2.0]], n_per_worker=5, noise=1e-3)
    probes = [np.zeros(2), np.ones(2)]
    assert measure_profile(degenerate, probes).sigma == 0.0
    assert measure_profile(noisy, probes).sigma > 0.0


def test_least_squares_constructor_validation():
    with pytest.raises(ConfigurationError):
        make_least_squares(0, 2, 3)
    with pytest.raises(ConfigurationError):
        make_least_squares(2, 2, 3, noise=-1.0)
    with pytest.raises(ConfigurationError):
        least_squares_from_offsets([[1.0, 2.0], [0.0, 1.0]], [[0.0, 0.0]], 3)


# logistic -----------------------------------------------------------------------


def test_regulariser_gradient_closed_form():
    lam = 0.7
    p = make_logistic_nonconvex(3, 1, 4, reg_lambda=lam, seed=0)
    x = np.array([0.5, -2.0, 0.0])
    p0 = make_logistic_nonconvex(3, 1, 4, reg_lambda=0.0, seed=0)
    reg = p.full_gradient(0, x) - p0.full_gradient(0, x)
    np.testing.assert_allclose(reg, lam * 2 * x / (1 + x**2) ** 2, rtol=1e-12, atol=1e-15)
    reg0 = p.full_gradient(0, np.zeros(3)) - p0.full_gradient(0, np.zeros(3))
    np.testing.assert_array_equal(reg0, np.zeros(3))


def test_iid_split_has_small_zeta_and_skew_increases_it():
    def zeta(skew):
        p = make_logistic_nonconvex(5, 4, 400, class_skew=skew, reg_lambda=0.0, seed=11)
        return measure_profile(p, [np.zeros(5), 0.1 * np.ones(5)]).zeta

    z0, z1 = zeta(0.0), zeta(1.0)
    assert z0 < 0.35
    assert z1 > 3 * z0


def test_full_skew_gives_single_label_per_worker():
    p = make_logistic_nonconvex(3, 4, 20, class_skew=1.0, seed=0)
    for k, data in enumerate(p.datasets):
        assert len(np.unique(data["labels"])) == 1


@pytest.mark.parametrize("skew", [-0.1, 1.5])
def test_class_skew_out_of_range(skew):
    with pytest.raises(ConfigurationError):
        make_logistic_nonconvex(3, 2, 5, class_skew=skew)


def test_make_problem_dispatch():
    p = make_problem({"family": "logistic", "dim": 3, "K": 2, "n_per_worker": 4, "seed": 1})
    assert p.family is Family.LOGISTIC and p.workers == 2 and p.dim == 3
    with pytest.raises(ConfigurationError):
        make_problem({"family": "logistic", "dim": 3, "K": 2, "n_per_worker": 4, "bogus": 1})


def test_profile_rejects_coincident_pairs():
    p = small_problems()[0]
    x = np.ones(p.dim)
    with pytest.raises(EstimationError):
        measure_profile(p, [x, x.copy()])
    with pytest.raises(EstimationError):
        measure_profile(p, [x])


def test_two_layer_dim():
    p = make_two_layer_tanh(3, 4, 2, 5)
    assert p.dim == 4 * 4


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4))
def test_gradients_are_finite(values):
    x = np.array(values)
    for p in small_problems():
        xx = np.resize(x, p.dim)
        assert np.all(np.isfinite(p.sample_gradient(0, xx, [0, 1])))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2), st.integers(1, 12), st.integers(0, 10_000))
def test_stacked_gradients_match_per_worker_bitwise(which, b, seed):
    p = small_problems()[which]
    rng = np.random.default_rng(seed)
    K = p.workers
    xs = rng.standard_normal((K, p.dim))
    batches = rng.integers(0, p.n_samples(0), size=(K, b))
    stacked = p.worker_gradients(range(K), xs, batches)
    for k in range(K):
        np.testing.assert_array_equal(stacked[k], p.sample_gradient(k, xs[k], batches[k]))
    split = np.concatenate([p.worker_gradients([0], xs[:1], batches[:1]),
                            p.worker_gradients(range(1, K), xs[1:], batches[1:])])
    np.testing.assert_array_equal(split, stacked)
    full = p.worker_gradients(range(K), xs)
    for k in range(K):
        np.testing.assert_array_equal(full[k], p.full_gradient(k, xs[k]))


def test_stacked_gradients_with_unequal_worker_sizes():
    base = make_logistic_nonconvex(3, 2, 8, seed=4)
    short = {key: arr[:5] for key, arr in base.datasets[1].items()}
    p = type(base)(base.family, base.dim, (base.datasets[0], short), base.reg_lambda)
    xs = np.ones((2, 3))
    tally = Tally()
    out = p.worker_gradients([0, 1], xs, counter=tally)
    np.testing.assert_array_equal(out[1], p.full_gradient(1, xs[1]))
    assert tally.n == 13
