import numpy as np
import pytest

from stemfl import rng as rngmod
from stemfl.problems import least_squares_from_offsets, make_logistic_nonconvex


def reference_sgd(p, k, x0, steps):
    """Plain minibatch SGD: ``steps`` is a list of (eta, batch) pairs.

    Written against the gradient oracle only, so it shares no update code
    with the federated engine.
    """
    x = np.array(x0, dtype=float)
    path = [x.copy()]
    for eta, batch in steps:
        x = x - eta * p.sample_gradient(k, x, batch)
        path.append(x.copy())
    return path


def philox_batch(seed, role, t, n, size, K=1, worker=0):
    # all K workers' batches at time t form one (K, size) draw; row k is worker k's
    gen = np.random.Generator(np.random.Philox(key=seed, counter=[0, role, 0, t]))
    return gen.integers(0, n, size=(K, size))[worker]


@pytest.fixture(scope="session")
def logistic_small():
    return make_logistic_nonconvex(6, 1, 30, class_skew=0.0, reg_lambda=0.2, seed=3)


@pytest.fixture(scope="session")
def hetero_ls():
    rng = np.random.default_rng(0)
    D = rng.standard_normal((8, 4))
    A = D.T @ D / 8
    offsets = rng.standard_normal((3, 4)) * 2
    return least_squares_from_offsets(A, offsets, n_per_worker=10, noise=0.5, seed=1)


ROLE_INIT = rngmod.ROLE_INIT
ROLE_STEP = rngmod.ROLE_STEP
