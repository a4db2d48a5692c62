"""Analysis-side quantities measured along a run.

Everything here uses exact finite-sum gradients and never charges IFO calls.
Functions take stacked worker arrays (``xs[k]`` is worker k's iterate,
``ds[k]`` its direction) rather than engine objects so they can be applied to
any snapshot.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problems import ProblemInstance


@dataclass(frozen=True)
class DiagnosticsSnapshot:
    e_norm_sq: float
    potential: float
    consensus_sq: float
    drift_sq: float


def fixed_order_mean(rows) -> np.ndarray:
    """Mean of a sequence of vectors with a pairwise tree in index order.

    The reduction order depends only on the number of rows, which keeps
    aggregates bitwise reproducible regardless of how the rows were produced.
    """
    rows = np.asarray(rows, dtype=float)
    n = len(rows)
    while len(rows) > 1:
        half = len(rows) // 2
        pairs = rows[0:2 * half:2] + rows[1:2 * half:2]
        rows = np.concatenate([pairs, rows[2 * half:]]) if len(rows) % 2 else pairs
    return rows[0] / n


def _spread(vectors, center: Optional[np.ndarray] = None) -> float:
    vs = np.asarray(vectors, dtype=float)
    if center is not None:
        return float(np.sum((vs - np.asarray(center)[None, :]) ** 2))
    # Centre on the first row before averaging: identical rows then give an
    # exact zero instead of the rounding residue of sum(x)/K - x.
    dev = vs - vs[0][None, :]
    return float(np.sum((dev - dev.mean(axis=0)[None, :]) ** 2))


def consensus(xs) -> float:
    """``sum_k ||x_k - mean(x)||^2``."""
    return _spread(xs)


def drift(ds, d_bar: Optional[np.ndarray] = None) -> float:
    """``sum_k ||d_k - d_bar||^2``; ``d_bar`` defaults to the worker mean."""
    return _spread(ds, d_bar)


def mean_local_gradient(p: ProblemInstance, xs) -> np.ndarray:
    return fixed_order_mean(p.worker_gradients(range(p.workers), xs))


def gradient_error(p: ProblemInstance, xs, ds=None, d_bar: Optional[np.ndarray] = None) -> float:
    """``||d_bar - (1/K) sum_k grad f^(k)(x_k)||^2``.

    ``d_bar`` is taken from the server when given, otherwise re-averaged from
    the worker directions ``ds``.
    """
    if d_bar is None:
        d_bar = fixed_order_mean(ds)
    e = np.asarray(d_bar) - mean_local_gradient(p, xs)
    return float(e @ e)


def potential(loss_at_mean: float, e_norm_sq: float, b: int, K: int, L: float, eta_prev: float) -> float:
    """``f(x_bar) + (bK / 64 L^2) * ||e||^2 / eta_{t-1}``."""
    return loss_at_mean + b * K / (64.0 * L**2) * e_norm_sq / eta_prev


def snapshot(p: ProblemInstance, xs, ds, schedule, t: int, d_bar=None, x_bar=None) -> DiagnosticsSnapshot:
    from .schedules import eta_of_t

    x_bar = fixed_order_mean(xs) if x_bar is None else x_bar
    e_sq = gradient_error(p, xs, ds, d_bar)
    phi = potential(p.loss(x_bar), e_sq, schedule.b, schedule.K, schedule.L, eta_of_t(schedule, t - 1))
    return DiagnosticsSnapshot(e_norm_sq=e_sq, potential=phi, consensus_sq=consensus(xs),
                               drift_sq=drift(ds))


def is_stationary(p: ProblemInstance, x, eps: float) -> bool:
    """``||grad f(x)||^2 <= eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = p.global_gradient(x)
    return bool(g @ g <= eps)


def first_hit(record, eps: float, column: str = "round") -> Optional[int]:
    """Value of ``column`` at the first row with ``grad_norm_sq <= eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = np.asarray(record.column("grad_norm_sq"))
    hits = np.flatnonzero(g <= eps)
    if hits.size == 0:
        return None
    return int(record.column(column)[hits[0]])


def rounds_to_eps(record, eps: float) -> Optional[int]:
    """Communication rounds completed when ``x_bar_t`` first became eps-stationary."""
    return first_hit(record, eps, "round")


def ifo_to_eps(record, eps: float) -> Optional[int]:
    return first_hit(record, eps, "ifo_total")


def finite_diff_check(p: ProblemInstance, points, h: float = 1e-5) -> float:
    """Max relative error of ``global_gradient`` against central differences.

    The relative error is ``||g - g_fd|| / max(||g||, ||g_fd||, 1)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        g = p.global_gradient(x)
        fd = np.empty_like(x)
        for i in range(x.size):
            step = np.zeros_like(x)
            step[i] = h
            fd[i] = (p.loss(x + step) - p.loss(x - step)) / (2.0 * h)
        scale = max(np.linalg.norm(g), np.linalg.norm(fd), 1.0)
        worst = max(worst, float(np.linalg.norm(g - fd) / scale))
    return worst
