"""Executable STEM and FedAvg round structures.

STEM time indexing follows the two-sided momentum recursion. Before
iteration ``t`` every worker holds ``x_t`` (``WorkerState.x``), the tentative
next point ``x_{t+1}`` (``x_next``) and the direction ``d_t`` (``d``).
Iteration ``t`` draws one minibatch, evaluates it at both ``x_{t+1}`` and
``x_t``, forms

    d_{t+1} = g(x_{t+1}) + (1 - a_{t+1}) * (d_t - g(x_t))

and either steps locally or, when ``t % I == 0``, hands ``(x_{t+1}, d_{t+1})``
to the server, which averages both and broadcasts
``x_{t+2} = x_bar_{t+1} - eta_{t+1} d_bar_{t+1}``. At a broadcast the
workers' copies of ``x_{t+1}`` and ``d_{t+1}`` are replaced by the averages,
so iterate consensus and direction drift are exactly zero at sync instants.

Inside the run loops the workers' states are stacked into ``(K, dim)``
arrays. Minibatches come from counter-based streams keyed by (seed, time),
one row per worker, and gradient rows are computed independently, so the
workers may be split across a thread pool without changing a single bit of
the output.
"""

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as rngmod
from .diagnostics import consensus, drift, fixed_order_mean, gradient_error, potential
from .errors import ConfigurationError, ProtocolError
from .problems import ProblemInstance
from .schedules import ScheduleState, eta_of_t, momentum_of_t

CSV_COLUMNS = ("t", "round", "loss", "grad_norm_sq", "eta", "a", "e_norm_sq", "consensus_sq",
               "drift_sq", "ifo_total", "comm_rounds")


@dataclass
class WorkerState:
    k: int
    x: np.ndarray
    d: np.ndarray
    x_next: Optional[np.ndarray] = None


@dataclass
class ServerState:
    x_bar: np.ndarray
    d_bar: np.ndarray
    round: int = 0


@dataclass
class Counters:
    ifo_per_worker: list
    comm_rounds: int = 0

    @classmethod
    def zeros(cls, K: int) -> "Counters":
        return cls(ifo_per_worker=[0] * K)

    @property
    def ifo_total(self) -> int:
        return sum(self.ifo_per_worker)

    def charge(self, k: int, n: int) -> None:
        # each worker only ever touches its own slot
        self.ifo_per_worker[k] += int(n)


@dataclass
class RunOptions:
    """Engine knobs that are not part of the schedule.

    ``exact`` replaces every minibatch by the worker's whole dataset (each
    sample used once), turning the estimators into exact-gradient recursions.
    ``stop_below`` ends the run at the first recorded row whose squared
    gradient norm is at or below it; the record then carries ``stopped_at``
    in ``extra`` and its counters cover only the iterations executed.
    """

    seed: int = 0
    x0: Optional[np.ndarray] = None
    exact: bool = False
    n_threads: int = 1
    diagnostics: bool = True
    track_local_error: bool = False
    stop_below: Optional[float] = None


@dataclass
class RunRecord:
    algorithm: str
    rows: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    output_index: Optional[int] = None
    counters: Optional[Counters] = None
    extra: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    @property
    def output_iterate(self) -> np.ndarray:
        return self.iterates[self.output_index]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        g = self.column("grad_norm_sq")
        best = int(np.argmin(g))
        last = self.rows[-1]
        return {
            "algorithm": self.algorithm,
            "T": len(self.rows),
            "final": {k: last[k] for k in ("t", "loss", "grad_norm_sq")},
            "best": {"t": self.rows[best]["t"], "grad_norm_sq": float(g[best]),
                     "loss": self.rows[best]["loss"]},
            "output_t": self.output_index + 1,
            "output_grad_norm_sq": self.rows[self.output_index]["grad_norm_sq"],
            "ifo_total": self.counters.ifo_total,
            "ifo_per_worker": list(self.counters.ifo_per_worker),
            "comm_rounds": self.counters.comm_rounds,
            **self.extra,
        }

    def write_summary(self, path, extra: Optional[dict] = None) -> dict:
        payload = self.summary()
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        return payload


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


# shared helpers ---------------------------------------------------------------


def _batches(p: ProblemInstance, opts: RunOptions, role: int, t: int, size: int):
    if opts.exact:
        return None
    return rngmod.draw_batches(opts.seed, role, t, [p.n_samples(k) for k in range(p.workers)], size)


def _check_consistent(p: ProblemInstance, s: ScheduleState) -> None:
    if p.workers != s.K:
        raise ConfigurationError(f"schedule has K={s.K} but problem has {p.workers} workers", field="K")
    if s.T % s.I:
        raise ConfigurationError(f"T={s.T} is not a multiple of I={s.I}", field="T")


def _pool(n_threads: int):
    return ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None


def _gradients(p, ks, xs, batches, counters, pool=None, n_threads=1):
    """Stacked minibatch gradients, optionally split into per-thread chunks."""
    ks = np.asarray(ks, dtype=np.intp)
    if pool is None:
        return p.worker_gradients(ks, xs, batches, counters)
    chunks = [c for c in np.array_split(np.arange(len(ks)), n_threads) if c.size]
    pick = (lambda c: None) if batches is None else (lambda c: [batches[i] for i in c])
    parts = pool.map(lambda c: p.worker_gradients(ks[c], xs[c], pick(c), counters), chunks)
    return np.concatenate(list(parts))


def _tile(v: np.ndarray, K: int) -> np.ndarray:
    return np.tile(v, (K, 1))


def _record_row(record, p, s, t, xs, ds, counters, d_bar, opts, a, ifo_total):
    x_bar = fixed_order_mean(xs)
    loss, g = p.loss_and_global_gradient(x_bar)
    row = {"t": t, "round": counters.comm_rounds, "loss": loss, "grad_norm_sq": float(g @ g),
           "eta": eta_of_t(s, t), "a": a, "ifo_total": ifo_total,
           "comm_rounds": counters.comm_rounds}
    if opts.diagnostics:
        e_sq = gradient_error(p, xs, ds, d_bar)
        row.update(e_norm_sq=e_sq, consensus_sq=consensus(xs), drift_sq=drift(ds),
                   potential=potential(loss, e_sq, s.b, s.K, s.L, eta_of_t(s, t - 1)))
    else:
        row.update(e_norm_sq=float("nan"), consensus_sq=float("nan"), drift_sq=float("nan"),
                   potential=float("nan"))
    if opts.track_local_error:
        full = p.worker_gradients(range(p.workers), xs)
        row["local_error"] = float(np.max(np.linalg.norm(ds - full, axis=1)))
    record.rows.append(row)
    record.iterates.append(x_bar)
    return opts.stop_below is not None and row["grad_norm_sq"] <= opts.stop_below


def select_output(record: RunRecord, rng: np.random.Generator) -> np.ndarray:
    """Uniformly chosen recorded average iterate; also stores its index."""
    if not record.iterates:
        raise ProtocolError("cannot select an output from an empty trajectory")
    record.output_index = int(rng.integers(0, len(record.iterates)))
    return record.iterates[record.output_index]


# STEM -------------------------------------------------------------------------


def init_stem(p: ProblemInstance, s: ScheduleState, seed: int = 0, x0=None, exact: bool = False):
    """Initial minibatch direction, consensus broadcast and the pre-loop step."""
    x1, x2, d_bar, counters = _init_stem(p, s, RunOptions(seed=seed, x0=x0, exact=exact))
    workers = [WorkerState(k=k, x=x1.copy(), d=d_bar.copy(), x_next=x2.copy()) for k in range(p.workers)]
    return workers, ServerState(x_bar=x1.copy(), d_bar=d_bar.copy(), round=0), counters


def _init_stem(p, s, opts, pool=None):
    _check_consistent(p, s)
    K = p.workers
    x1 = np.zeros(p.dim) if opts.x0 is None else np.array(opts.x0, dtype=float)
    counters = Counters.zeros(K)
    local = _gradients(p, range(K), _tile(x1, K), _batches(p, opts, rngmod.ROLE_INIT, 1, s.B), counters,
                       pool, opts.n_threads)
    d_bar = fixed_order_mean(local)
    return x1, x1 - eta_of_t(s, 1) * d_bar, d_bar, counters


def _stem_directions(p, s, t, X, Xn, D, counters, opts, pool=None, ks=None):
    # one minibatch per worker, evaluated at both x_{t+1} and x_t
    ks = np.arange(p.workers) if ks is None else np.asarray(ks)
    batches = _batches(p, opts, rngmod.ROLE_STEP, t + 1, s.b)
    if batches is not None:
        batches = batches[ks]
        batches = np.concatenate([batches, batches])
    g = _gradients(p, np.concatenate([ks, ks]), np.concatenate([Xn, X]), batches, counters, pool, opts.n_threads)
    m = len(ks)
    return g[:m] + (1.0 - momentum_of_t(s, t)) * (D - g[m:])


def stem_local_update(worker: WorkerState, p: ProblemInstance, s: ScheduleState, t: int,
                      counters: Counters, seed: int = 0, exact: bool = False,
                      sync: Optional[bool] = None) -> WorkerState:
    """One worker-side recursive-momentum step at iteration ``t``.

    Returns the new state holding ``(x_{t+1}, x_{t+2}, d_{t+1})``. When
    ``t % I == 0`` the local step is skipped and ``x_next`` is left ``None``
    for the server to fill.
    """
    opts = RunOptions(seed=seed, exact=exact)
    d_new = _stem_directions(p, s, t, worker.x[None], worker.x_next[None], worker.d[None], counters, opts,
                             ks=[worker.k])[0]
    sync = (t % s.I == 0) if sync is None else sync
    x_next = None if sync else worker.x_next - eta_of_t(s, t + 1) * d_new
    return WorkerState(k=worker.k, x=worker.x_next, d=d_new, x_next=x_next)


def stem_server_aggregate(workers, server: ServerState, s: ScheduleState, t: int, counters: Counters):
    """Server momentum step; only legal when ``t % I == 0``."""
    if t % s.I:
        raise ProtocolError(f"aggregation at t={t} is off the round boundary (I={s.I})")
    d_bar = fixed_order_mean([w.d for w in workers])
    x_bar = fixed_order_mean([w.x for w in workers])
    x_next = x_bar - eta_of_t(s, t + 1) * d_bar
    new_workers = [WorkerState(k=w.k, x=x_bar.copy(), d=d_bar.copy(), x_next=x_next.copy()) for w in workers]
    counters.comm_rounds += 1
    return new_workers, ServerState(x_bar=x_bar, d_bar=d_bar, round=server.round + 1)


def run_stem(p: ProblemInstance, s: ScheduleState, seed: int = 0, *, x0=None, exact: bool = False,
             n_threads: int = 1, diagnostics: bool = True, track_local_error: bool = False,
             stop_below: Optional[float] = None) -> RunRecord:
    opts = RunOptions(seed=seed, x0=x0, exact=exact, n_threads=n_threads, diagnostics=diagnostics,
                      track_local_error=track_local_error, stop_below=stop_below)
    K = p.workers
    record = RunRecord(algorithm="stem")
    pool = _pool(opts.n_threads)
    try:
        x1, x2, synced_d, counters = _init_stem(p, s, opts, pool)
        X, Xn, D = _tile(x1, K), _tile(x2, K), _tile(synced_d, K)
        for t in range(1, s.T + 1):
            if _record_row(record, p, s, t, X, D, counters, synced_d, opts, momentum_of_t(s, t),
                           counters.ifo_total):
                record.extra["stopped_at"] = t
                break
            synced_d = None
            D = _stem_directions(p, s, t, X, Xn, D, counters, opts, pool)
            X = Xn
            if t % s.I == 0:
                synced_d = fixed_order_mean(D)
                x_bar = fixed_order_mean(X)
                X, D = _tile(x_bar, K), _tile(synced_d, K)
                Xn = _tile(x_bar - eta_of_t(s, t + 1) * synced_d, K)
                counters.comm_rounds += 1
            else:
                Xn = Xn - eta_of_t(s, t + 1) * D
    finally:
        if pool is not None:
            pool.shutdown()
    record.counters = counters
    select_output(record, rngmod.stream(seed, rngmod.ROLE_OUTPUT))
    return record


# FedAvg -----------------------------------------------------------------------


def fedavg_local_update(worker: WorkerState, p: ProblemInstance, s: ScheduleState, t: int,
                        counters: Counters, seed: int = 0, exact: bool = False) -> WorkerState:
    """Minibatch gradient at ``x_t`` and the local step to ``x_{t+1}``."""
    batches = _batches(p, RunOptions(seed=seed, exact=exact), rngmod.ROLE_STEP, t, s.b)
    batch = None if batches is None else batches[worker.k][None]
    d = p.worker_gradients([worker.k], worker.x[None], batch, counters)[0]
    return WorkerState(k=worker.k, x=worker.x - eta_of_t(s, t) * d, d=d)


def fedavg_aggregate(workers, server: ServerState, counters: Counters):
    """Average iterates only; the server keeps no direction state."""
    x_bar = fixed_order_mean([w.x for w in workers])
    counters.comm_rounds += 1
    new_workers = [WorkerState(k=w.k, x=x_bar.copy(), d=w.d) for w in workers]
    return new_workers, ServerState(x_bar=x_bar, d_bar=np.zeros_like(x_bar), round=server.round + 1)


def run_fedavg(p: ProblemInstance, s: ScheduleState, seed: int = 0, *, x0=None, exact: bool = False,
               n_threads: int = 1, diagnostics: bool = True, track_local_error: bool = False,
               stop_below: Optional[float] = None) -> RunRecord:
    _check_consistent(p, s)
    opts = RunOptions(seed=seed, x0=x0, exact=exact, n_threads=n_threads, diagnostics=diagnostics,
                      track_local_error=track_local_error, stop_below=stop_below)
    K = p.workers
    x1 = np.zeros(p.dim) if x0 is None else np.array(x0, dtype=float)
    X = _tile(x1, K)
    counters = Counters.zeros(K)
    record = RunRecord(algorithm="fedavg")
    pool = _pool(opts.n_threads)
    try:
        for t in range(1, s.T + 1):
            spent = counters.ifo_total
            D = _gradients(p, range(K), X, _batches(p, opts, rngmod.ROLE_STEP, t, s.b), counters, pool,
                           opts.n_threads)
            if _record_row(record, p, s, t, X, D, counters, None, opts, 1.0, spent):
                record.extra["stopped_at"] = t
                break
            X = X - eta_of_t(s, t) * D
            if t % s.I == 0:
                X = _tile(fixed_order_mean(X), K)
                counters.comm_rounds += 1
    finally:
        if pool is not None:
            pool.shutdown()
    record.counters = counters
    select_output(record, rngmod.stream(seed, rngmod.ROLE_OUTPUT))
    return record
