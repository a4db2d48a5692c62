"""Step-size, momentum and batch/local-update laws.

Three schedule modes share one :class:`ScheduleState`:

* ``theoretical``: the horizon-free law
  ``eta_t = kappa / (w_t + sigma^2 t)^(1/3)`` with ``kappa``, ``c`` and the
  three-way-max ``w_t`` derived from (sigma, L, b, K, I) and ``B = b I``.
* ``practical``: ``w_t = 1`` and ``c = cbar / kappa^2`` with user-chosen
  ``kappa`` and ``cbar``; the decay counter advances once per ``epoch_len``
  iterations.
* ``constant``: a fixed step (FedAvg, ``eta = sqrt(bK/T)`` by default) with
  the momentum weight pinned to 1.

The momentum weight used at iteration ``t`` is ``a_{t+1} = min(1, c eta_t^2)``.
"""

import csv
import math
import warnings
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DegenerateScheduleError

THEORETICAL = "theoretical"
PRACTICAL = "practical"
CONSTANT = "constant"
MODES = (THEORETICAL, PRACTICAL, CONSTANT)


class TradeoffWarning(UserWarning):
    """The horizon is too short for the (I, b) trade-off map; (1, 1) returned."""


@dataclass(frozen=True)
class ScheduleState:
    mode: str
    kappa_bar: float
    c: float
    sigma: float
    L: float
    I: int
    b: int
    B: int
    K: int
    T: int
    nu: Optional[float] = None
    practical_cbar: Optional[float] = None
    practical_kappa: Optional[float] = None
    epoch_len: int = 1
    eta_const: Optional[float] = None
    a_override: Optional[float] = None

    @property
    def rounds(self) -> int:
        return self.T // self.I

    def with_momentum(self, a: Optional[float]) -> "ScheduleState":
        """Copy with the momentum weight pinned to ``a`` (``None`` unpins)."""
        if a is not None and not 0.0 < a <= 1.0:
            raise ConfigurationError(f"pinned momentum must lie in (0, 1], got {a}", field="a")
        return replace(self, a_override=a)

    def to_dict(self) -> dict:
        return asdict(self)


def _positive_int(name, value):
    if int(value) != value or value < 1:
        raise ConfigurationError(f"{name} must be a positive integer, got {value!r}", field=name)
    return int(value)


def pad_horizon(T: int, I: int) -> tuple:
    """Round ``T`` up to a multiple of ``I``; returns ``(T_padded, pad)``."""
    T = _positive_int("T", T)
    I = _positive_int("I", I)
    padded = -(-T // I) * I
    return padded, padded - T


def theoretical_schedule(sigma: float, L: float, b: int, K: int, I: int, T: int,
                         nu: Optional[float] = None) -> ScheduleState:
    b, K, I, T = (_positive_int(n, v) for n, v in (("b", b), ("K", K), ("I", I), ("T", T)))
    if L <= 0:
        raise ConfigurationError("L must be positive", field="L")
    if sigma < 0:
        raise ConfigurationError("sigma must be nonnegative", field="sigma")
    if sigma == 0:
        raise DegenerateScheduleError("sigma = 0 leaves the theoretical step size undefined; "
                                      "use practical_schedule", field="sigma")
    if T % I:
        raise ConfigurationError(f"T={T} is not a multiple of I={I}; pad it with pad_horizon", field="T")
    bK = b * K
    kappa = bK ** (2.0 / 3.0) * sigma ** (2.0 / 3.0) / L
    c = 64.0 * L**2 / bK + sigma**2 / (24.0 * kappa**3 * L * I)
    return ScheduleState(mode=THEORETICAL, kappa_bar=kappa, c=c, sigma=float(sigma), L=float(L),
                         I=I, b=b, B=b * I, K=K, T=T, nu=nu)


def practical_schedule(kappa: float, cbar: float, sigma: float, L: float, b: int, K: int,
                       I: int, T: int, epoch_len: int = 1, B: Optional[int] = None,
                       nu: Optional[float] = None) -> ScheduleState:
    """``w_t = 1`` and ``c = cbar / kappa^2``.

    ``B`` defaults to ``b * I``. ``sigma`` may be zero, in which case the
    step size is the constant ``kappa``.
    """
    b, K, I, T = (_positive_int(n, v) for n, v in (("b", b), ("K", K), ("I", I), ("T", T)))
    epoch_len = _positive_int("epoch_len", epoch_len)
    if kappa <= 0 or cbar <= 0:
        raise ConfigurationError("kappa and cbar must be positive", field="kappa" if kappa <= 0 else "cbar")
    if T % I:
        raise ConfigurationError(f"T={T} is not a multiple of I={I}; pad it with pad_horizon", field="T")
    B = b * I if B is None else _positive_int("B", B)
    return ScheduleState(mode=PRACTICAL, kappa_bar=float(kappa), c=cbar / kappa**2, sigma=float(sigma),
                         L=float(L), I=I, b=b, B=B, K=K, T=T, nu=nu, practical_cbar=float(cbar),
                         practical_kappa=float(kappa), epoch_len=epoch_len)


def constant_schedule(b: int, K: int, I: int, T: int, eta: Optional[float] = None,
                      L: float = 1.0, nu: Optional[float] = None) -> ScheduleState:
    """FedAvg schedule; ``eta`` defaults to :func:`fedavg_eta`."""
    b, K, I, T = (_positive_int(n, v) for n, v in (("b", b), ("K", K), ("I", I), ("T", T)))
    if T % I:
        raise ConfigurationError(f"T={T} is not a multiple of I={I}; pad it with pad_horizon", field="T")
    eta = fedavg_eta(b, K, T) if eta is None else float(eta)
    if eta <= 0:
        raise ConfigurationError("eta must be positive", field="eta")
    return ScheduleState(mode=CONSTANT, kappa_bar=eta, c=0.0, sigma=0.0, L=float(L), I=I, b=b, B=b,
                         K=K, T=T, nu=nu, eta_const=eta, a_override=1.0)


def w_of_t(s: ScheduleState, t: int) -> float:
    if s.mode != THEORETICAL:
        return 1.0
    L, I, k3 = s.L, s.I, s.kappa_bar**3
    return max(2.0 * s.sigma**2,
               4096.0 * L**3 * I**3 * k3 - s.sigma**2 * t,
               s.c**3 * k3 / (4096.0 * L**3 * I**3))


def eta_of_t(s: ScheduleState, t: int) -> float:
    if s.mode == CONSTANT:
        return s.eta_const
    if s.mode == PRACTICAL:
        t = t // s.epoch_len
    # cbrt keeps perfect cubes exact (4096 -> 16)
    eta = s.kappa_bar / float(np.cbrt(w_of_t(s, t) + s.sigma**2 * t))
    if s.mode == THEORETICAL:
        # w_t already implies eta_t <= 1/(16 L I); the min only absorbs rounding
        eta = min(eta, 1.0 / (16.0 * s.L * s.I))
    return eta


def raw_momentum(s: ScheduleState, t: int) -> float:
    """Unclamped ``c * eta_t^2``."""
    return s.c * eta_of_t(s, t) ** 2


def momentum_of_t(s: ScheduleState, t: int) -> float:
    """Momentum weight ``a_{t+1}`` applied during iteration ``t``."""
    if s.a_override is not None:
        return s.a_override
    return min(1.0, raw_momentum(s, t))


def _floor(value: float) -> int:
    # guard against 4.999999 from a fractional power of a perfect power
    return max(1, int(math.floor(value + 1e-9)))


def _check_nu(nu):
    if not 0.0 <= nu <= 1.0:
        raise ConfigurationError(f"nu must lie in [0, 1], got {nu}", field="nu")


def stem_tradeoff(nu: float, T: int, K: int) -> tuple:
    """``(I, b)`` with ``I = (T/K^2)^(nu/3)`` and ``b = (T/K^2)^(1/2 - nu/2)``, constants 1."""
    _check_nu(nu)
    base = T / K**2
    if base < 1:
        warnings.warn(f"T={T} < K^2={K**2}; using (I, b) = (1, 1)", TradeoffWarning, stacklevel=2)
        return 1, 1
    return _floor(base ** (nu / 3.0)), _floor(base ** (0.5 - nu / 2.0))


def fedavg_tradeoff(nu: float, T: int, K: int) -> tuple:
    """``(I, b)`` with ``I = (T/K^3)^(nu/4)`` and ``b = (T/K^3)^(1/3 - nu/3)``, constants 1."""
    _check_nu(nu)
    base = T / K**3
    if base < 1:
        warnings.warn(f"T={T} < K^3={K**3}; using (I, b) = (1, 1)", TradeoffWarning, stacklevel=2)
        return 1, 1
    return _floor(base ** (nu / 4.0)), _floor(base ** (1.0 / 3.0 - nu / 3.0))


def fedavg_eta(b: int, K: int, T: int) -> float:
    return math.sqrt(b * K / T)


def fedavg_horizon_ok(L: float, I: int, b: int, K: int, T: int) -> bool:
    """The FedAvg guarantee needs ``T >= 81 L^2 I^2 b K``."""
    return T >= 81.0 * L**2 * I**2 * b * K


def schedule_table(s: ScheduleState, t_max: Optional[int] = None) -> list:
    """Rows ``(t, w_t, eta_t, a_{t+1})`` for ``t = 0..t_max`` (default ``T``)."""
    t_max = s.T if t_max is None else t_max
    return [(t, w_of_t(s, t), eta_of_t(s, t), momentum_of_t(s, t)) for t in range(t_max + 1)]


def write_schedule_csv(s: ScheduleState, path, t_max: Optional[int] = None) -> None:
    """Write ``t,w,eta,a`` rows to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_schedule_rows(s, path, t_max)
        return
    with open(path, "w", newline="") as fh:
        _write_schedule_rows(s, fh, t_max)


def _write_schedule_rows(s, fh, t_max):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "w", "eta", "a"])
    for t, w, eta, a in schedule_table(s, t_max):
        writer.writerow([t, repr(w), repr(eta), repr(a)])
