"""Synthetic K-worker finite-sum objectives with exact gradient oracles.

Each worker's data distribution is the uniform empirical distribution over
its own sample list, so local gradients, the intra-node variance and the
inter-node spread can all be computed exactly by enumeration.

Three families are provided:

``least_squares``
    Quadratic with a design matrix ``A`` shared by every sample and every
    worker; only the per-sample target vectors differ. The per-sample loss is
    ``0.5 * x'Ax - v_i'x`` so worker ``k``'s gradient is ``A x - c_k`` with
    ``c_k`` the mean of its targets.
``logistic``
    Binary logistic loss plus the bounded nonconvex penalty
    ``lam * sum(x_j**2 / (1 + x_j**2))``; heterogeneity comes from label skew.
``two_layer_tanh``
    Squared loss of a one-hidden-layer tanh network with the same penalty;
    heterogeneity comes from per-worker input shifts.
"""

from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, EstimationError, UsageError


class Family(str, Enum):
    LEAST_SQUARES = "least_squares"
    LOGISTIC = "logistic"
    TWO_LAYER_TANH = "two_layer_tanh"


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A K-worker finite-sum objective.

    ``datasets[k]`` is a dict of equally long arrays holding worker ``k``'s
    samples. ``shared`` carries family-wide constants (the design matrix for
    least squares, the hidden width for the tanh network).
    """

    family: Family
    dim: int
    datasets: tuple
    reg_lambda: float = 0.0
    shared: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def workers(self) -> int:
        return len(self.datasets)

    def n_samples(self, k: int) -> int:
        return _n_rows(self.datasets[k])

    # oracles -----------------------------------------------------------

    def per_sample_gradients(self, k: int, x: np.ndarray, batch, check: bool = True) -> np.ndarray:
        """Rows are ``grad f^(k)(x; xi_i)`` for each index in ``batch``.

        ``check=False`` skips index validation for batches the caller drew
        itself from ``[0, n_samples(k))``.
        """
        idx = self._check_batch(k, batch) if check else batch
        samples = {key: arr[idx] for key, arr in self.datasets[k].items()}
        return _GRADS[self.family](self, samples, np.asarray(x, dtype=float))

    def sample_gradient(self, k: int, x: np.ndarray, batch, counter=None, check: bool = True) -> np.ndarray:
        grads = self.per_sample_gradients(k, x, batch, check)
        if counter is not None:
            counter.charge(k, grads.shape[0])
        return grads.mean(axis=-2)

    def worker_gradients(self, ks, xs, batches=None, counter=None) -> np.ndarray:
        """Minibatch gradients for several workers at once.

        Row ``i`` equals ``sample_gradient(ks[i], xs[i], batches[i])`` bit for
        bit; ``batches`` is an integer array of shape ``(len(ks), b)``, or
        ``None`` for each worker's whole dataset.
        """
        ks = np.asarray(ks, dtype=np.intp)
        xs = np.asarray(xs, dtype=float)
        if batches is None:
            batches = [np.arange(self.n_samples(k)) for k in ks]
            if self._stacked is not None:
                batches = np.stack(batches)
        if self._stacked is not None:
            batches = np.asarray(batches, dtype=np.intp)
            samples = {key: arr[ks[:, None], batches] for key, arr in self._stacked.items()}
            out = _GRADS[self.family](self, samples, xs).mean(axis=-2)
        else:
            out = np.stack([self.sample_gradient(k, x, idx, check=False) for k, x, idx in zip(ks, xs, batches)])
        if counter is not None:
            for k, idx in zip(ks, batches):
                counter.charge(k, len(idx))
        return out

    @cached_property
    def _stacked(self):
        # (K, n, ...) arrays when every worker holds the same number of samples
        if len({self.n_samples(k) for k in range(self.workers)}) != 1:
            return None
        return {key: np.stack([d[key] for d in self.datasets]) for key in self.datasets[0]}

    def full_gradient(self, k: int, x: np.ndarray) -> np.ndarray:
        return self.per_sample_gradients(k, x, np.arange(self.n_samples(k))).mean(axis=0)

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        return np.mean([self.full_gradient(k, x) for k in range(self.workers)], axis=0)

    def loss_and_global_gradient(self, x: np.ndarray) -> tuple:
        """``(f(x), grad f(x))`` in one pass over the pooled samples.

        Agrees with :meth:`loss` and :meth:`global_gradient` up to rounding.
        """
        data, weights = self._pooled
        x = np.asarray(x, dtype=float)
        g = weights @ _GRADS[self.family](self, data, x)
        f = weights @ _LOSSES[self.family](self, data, x, np.arange(weights.size))
        return float(f), g

    @cached_property
    def _pooled(self):
        keys = self.datasets[0].keys()
        data = {key: np.concatenate([d[key] for d in self.datasets]) for key in keys}
        weights = np.concatenate([np.full(self.n_samples(k), 1.0 / (self.workers * self.n_samples(k)))
                                  for k in range(self.workers)])
        return data, weights

    def worker_loss(self, k: int, x: np.ndarray) -> float:
        data = self.datasets[k]
        x = np.asarray(x, dtype=float)
        return float(_LOSSES[self.family](self, data, x, np.arange(_n_rows(data))).mean())

    def loss(self, x: np.ndarray) -> float:
        return float(np.mean([self.worker_loss(k, x) for k in range(self.workers)]))

    def _check_batch(self, k: int, batch) -> np.ndarray:
        if not 0 <= k < self.workers:
            raise UsageError(f"worker id {k} outside [0, {self.workers})")
        idx = np.asarray(batch, dtype=np.intp).reshape(-1)
        n = self.n_samples(k)
        if idx.size == 0:
            raise UsageError("empty batch")
        if idx.min() < 0 or idx.max() >= n:
            raise UsageError(f"batch index outside [0, {n}) for worker {k}")
        return idx


def _n_rows(data: dict) -> int:
    return len(next(iter(data.values())))


# module-level aliases mirroring the method API


def sample_gradient(p: ProblemInstance, k: int, x, batch, counter=None) -> np.ndarray:
    """Minibatch gradient ``(1/|batch|) sum grad f^(k)(x; xi_i)``.

    Charges ``len(batch)`` IFO calls to ``counter`` (anything with a
    ``charge(worker, n)`` method) when one is given.
    """
    return p.sample_gradient(k, x, batch, counter)


def full_gradient(p: ProblemInstance, k: int, x) -> np.ndarray:
    return p.full_gradient(k, x)


def global_gradient(p: ProblemInstance, x) -> np.ndarray:
    return p.global_gradient(x)


# family kernels ------------------------------------------------------------


def _reg_grad(lam: float, x: np.ndarray) -> np.ndarray:
    return lam * 2.0 * x / (1.0 + x * x) ** 2


def _reg_value(lam: float, x: np.ndarray) -> float:
    return lam * float(np.sum(x * x / (1.0 + x * x)))


# Gradient kernels take gathered samples whose arrays share leading axes
# ``(..., b)`` and points ``X`` of shape ``(..., dim)``; they return
# ``(..., b, dim)``. Only elementwise ops and last-axis sums are used, so a
# row's result does not depend on how many rows are evaluated together.


def _rowdot(M, X):
    return np.sum(M * X[..., None, :], axis=-1)


def _ls_grads(p, s, X):
    return _rowdot(p.shared["A"], X)[..., None, :] - s["targets"]


def _ls_losses(p, data, x, idx):
    return 0.5 * x @ p.shared["A"] @ x - data["targets"][idx] @ x


def _logistic_grads(p, s, X):
    z, y = s["features"], s["labels"]
    coef = -y * expit(-y * _rowdot(z, X))
    return coef[..., None] * z + _reg_grad(p.reg_lambda, X)[..., None, :]


def _logistic_losses(p, data, x, idx):
    z = data["features"][idx]
    y = data["labels"][idx]
    return np.logaddexp(0.0, -y * (z @ x)) + _reg_value(p.reg_lambda, x)


def _tanh_unpack(p, x):
    h = p.shared["hidden"]
    q = p.shared["input_dim"]
    return x[..., : h * q].reshape(x.shape[:-1] + (h, q)), x[..., h * q:]


def _tanh_grads(p, s, X):
    W, v = _tanh_unpack(p, X)
    z = s["features"]
    act = np.tanh(np.sum(z[..., :, None, :] * W[..., None, :, :], axis=-1))
    r = np.sum(act * v[..., None, :], axis=-1) - s["targets"]
    gv = r[..., None] * act
    gW = (r[..., None] * v[..., None, :] * (1.0 - act * act))[..., None] * z[..., :, None, :]
    g = np.concatenate([gW.reshape(gW.shape[:-2] + (-1,)), gv], axis=-1)
    return g + _reg_grad(p.reg_lambda, X)[..., None, :]


def _tanh_losses(p, data, x, idx):
    W, v = _tanh_unpack(p, x)
    z = data["features"][idx]
    r = np.tanh(z @ W.T) @ v - data["targets"][idx]
    return 0.5 * r * r + _reg_value(p.reg_lambda, x)


_GRADS = {
    Family.LEAST_SQUARES: _ls_grads,
    Family.LOGISTIC: _logistic_grads,
    Family.TWO_LAYER_TANH: _tanh_grads,
}
_LOSSES = {
    Family.LEAST_SQUARES: _ls_losses,
    Family.LOGISTIC: _logistic_losses,
    Family.TWO_LAYER_TANH: _tanh_losses,
}


# generators -----------------------------------------------------------------


def _check_sizes(dim, K, n_per_worker):
    for name, value in (("dim", dim), ("K", K), ("n_per_worker", n_per_worker)):
        if int(value) != value or value < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {value!r}", field=name)


def least_squares_from_offsets(A, offsets, n_per_worker: int, noise: float = 0.0,
                               seed: int = 0) -> ProblemInstance:
    """Shared-design quadratic with prescribed worker offsets ``c_k``.

    Targets are ``c_k + noise * (e_i - mean(e))`` with Gaussian ``e_i``, so
    every worker's mean target is ``c_k`` and the inter-node spread is exactly
    ``max ||c_k - c_l||`` at every point.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    K, dim = offsets.shape
    _check_sizes(dim, K, n_per_worker)
    if A.shape != (dim, dim):
        raise ConfigurationError(f"design matrix must be {dim}x{dim}", field="A")
    if not np.allclose(A, A.T) or np.linalg.eigvalsh(A).min() < -1e-12:
        raise ConfigurationError("design matrix must be symmetric PSD", field="A")
    if noise < 0:
        raise ConfigurationError("noise must be nonnegative", field="noise")
    rng = np.random.default_rng(seed)
    datasets = []
    for k in range(K):
        jitter = rng.standard_normal((n_per_worker, dim))
        jitter -= jitter.mean(axis=0)
        datasets.append({"targets": offsets[k][None, :] + noise * jitter})
    return ProblemInstance(
        family=Family.LEAST_SQUARES,
        dim=dim,
        datasets=tuple(datasets),
        shared={"A": A},
        meta={"offsets": offsets, "n_per_worker": n_per_worker, "noise": noise, "seed": seed},
    )


def make_least_squares(dim: int, K: int, n_per_worker: int, hetero_shift: float = 0.0,
                       noise: float = 0.0, seed: int = 0) -> ProblemInstance:
    if hetero_shift < 0:
        raise ConfigurationError("hetero_shift must be nonnegative", field="hetero_shift")
    _check_sizes(dim, K, n_per_worker)
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((2 * dim, dim))
    A = D.T @ D / (2 * dim)
    A = 0.5 * (A + A.T)
    base = rng.standard_normal(dim)
    offsets = base[None, :] + hetero_shift * rng.standard_normal((K, dim))
    p = least_squares_from_offsets(A, offsets, n_per_worker, noise, seed=seed + 1)
    p.meta.update(hetero_shift=hetero_shift, seed=seed)
    return p


def make_logistic_nonconvex(dim: int, K: int, n_per_worker: int, class_skew: float = 0.0,
                            reg_lambda: float = 0.1, seed: int = 0,
                            separation: float = 2.0, feature_scale: float = 1.0) -> ProblemInstance:
    """Two-class Gaussian mixture split across workers with label skew.

    Worker ``k`` draws its labels with majority class ``k mod 2`` at rate
    ``(1 + class_skew) / 2``: zero skew is an i.i.d. split, full skew gives
    every worker a single label.
    """
    _check_sizes(dim, K, n_per_worker)
    if not 0.0 <= class_skew <= 1.0:
        raise ConfigurationError(f"class_skew must lie in [0, 1], got {class_skew}", field="class_skew")
    if reg_lambda < 0:
        raise ConfigurationError("reg_lambda must be nonnegative", field="reg_lambda")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim)
    direction *= separation / np.linalg.norm(direction)
    # a class-independent centre; without it y*z has the same law for both
    # classes and label skew would not move the local gradients apart
    centre = rng.standard_normal(dim)
    centre *= separation / np.linalg.norm(centre)
    datasets = []
    for k in range(K):
        majority = 1.0 if k % 2 == 0 else -1.0
        keep = rng.random(n_per_worker) < 0.5 * (1.0 + class_skew)
        labels = np.where(keep, majority, -majority)
        feats = centre[None, :] + labels[:, None] * direction[None, :] + rng.standard_normal((n_per_worker, dim))
        feats *= feature_scale
        datasets.append({"features": feats, "labels": labels})
    return ProblemInstance(
        family=Family.LOGISTIC,
        dim=dim,
        datasets=tuple(datasets),
        reg_lambda=float(reg_lambda),
        meta={"n_per_worker": n_per_worker, "class_skew": class_skew, "seed": seed,
              "separation": separation, "feature_scale": feature_scale},
    )


def make_two_layer_tanh(input_dim: int, hidden: int, K: int, n_per_worker: int,
                        hetero_shift: float = 0.0, noise: float = 0.1,
                        reg_lambda: float = 0.01, seed: int = 0) -> ProblemInstance:
    """Regression onto a random teacher network; ``dim = hidden * (input_dim + 1)``."""
    _check_sizes(input_dim, K, n_per_worker)
    _check_sizes(hidden, K, n_per_worker)
    rng = np.random.default_rng(seed)
    W_t = rng.standard_normal((hidden, input_dim)) / np.sqrt(input_dim)
    v_t = rng.standard_normal(hidden) / np.sqrt(hidden)
    datasets = []
    for _ in range(K):
        shift = hetero_shift * rng.standard_normal(input_dim)
        z = rng.standard_normal((n_per_worker, input_dim)) + shift[None, :]
        y = np.tanh(z @ W_t.T) @ v_t + noise * rng.standard_normal(n_per_worker)
        datasets.append({"features": z, "targets": y})
    return ProblemInstance(
        family=Family.TWO_LAYER_TANH,
        dim=hidden * (input_dim + 1),
        datasets=tuple(datasets),
        reg_lambda=float(reg_lambda),
        shared={"hidden": hidden, "input_dim": input_dim},
        meta={"n_per_worker": n_per_worker, "hetero_shift": hetero_shift, "seed": seed},
    )


def make_problem(spec: dict) -> ProblemInstance:
    """Build an instance from a config dict (``family`` plus generator kwargs)."""
    spec = dict(spec)
    family = Family(spec.pop("family"))
    makers = {
        Family.LEAST_SQUARES: make_least_squares,
        Family.LOGISTIC: make_logistic_nonconvex,
        Family.TWO_LAYER_TANH: make_two_layer_tanh,
    }
    try:
        return makers[family](**spec)
    except TypeError as exc:
        raise ConfigurationError(f"bad problem parameters: {exc}", field="problem") from exc


# smoothness / variance profile ----------------------------------------------


@dataclass(frozen=True)
class SmoothnessProfile:
    sigma: float
    zeta: float
    L_hat: float
    f_star_hat: float


def intra_node_variance(p: ProblemInstance, k: int, x) -> float:
    """Exact ``E ||grad f^(k)(x; xi) - grad f^(k)(x)||^2`` over worker k's data."""
    g = p.per_sample_gradients(k, x, np.arange(p.n_samples(k)))
    g = g - g[0]  # identical rows then give exactly zero
    return float(np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1)))


def inter_node_spread(p: ProblemInstance, x) -> float:
    """``max_{k,l} ||grad f^(k)(x) - grad f^(l)(x)||``."""
    grads = [p.full_gradient(k, x) for k in range(p.workers)]
    best = 0.0
    for k in range(p.workers):
        for l in range(k + 1, p.workers):
            best = max(best, float(np.linalg.norm(grads[k] - grads[l])))
    return best


def measure_profile(p: ProblemInstance, probe_points: Sequence, probe_pairs: Optional[Sequence] = None) -> SmoothnessProfile:
    """Measure sigma, zeta and the sample-gradient Lipschitz constant.

    ``probe_pairs`` defaults to all pairs of probe points. Coincident pairs
    are skipped; if every pair coincides an :class:`EstimationError` is raised.
    """
    points = [np.asarray(x, dtype=float) for x in probe_points]
    if len(points) < 2:
        raise EstimationError("need at least two probe points")
    if probe_pairs is None:
        probe_pairs = [(points[i], points[j]) for i in range(len(points)) for j in range(i + 1, len(points))]

    sigma_sq = max(intra_node_variance(p, k, x) for x in points for k in range(p.workers))
    zeta = max(inter_node_spread(p, x) for x in points)

    L_hat = 0.0
    used = 0
    for x, y in probe_pairs:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        gap = np.linalg.norm(x - y)
        if gap == 0.0:
            continue
        used += 1
        for k in range(p.workers):
            idx = np.arange(p.n_samples(k))
            diff = p.per_sample_gradients(k, x, idx) - p.per_sample_gradients(k, y, idx)
            L_hat = max(L_hat, float(np.linalg.norm(diff, axis=1).max() / gap))
    if used == 0:
        raise EstimationError("all probe pairs are coincident")
    if L_hat == 0.0:
        raise EstimationError("sample gradients are constant along every probe pair")

    f_star_hat = min(p.loss(x) for x in points)
    return SmoothnessProfile(sigma=float(np.sqrt(sigma_sq)), zeta=zeta, L_hat=L_hat, f_star_hat=f_star_hat)


def default_probes(p: ProblemInstance, n_points: int = 6, scale: float = 1.0, seed: int = 0):
    """Origin plus Gaussian points; deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    return [np.zeros(p.dim)] + [scale * rng.standard_normal(p.dim) for _ in range(n_points - 1)]
