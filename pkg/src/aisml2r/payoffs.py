"""Discounted payoffs and closed-form reference prices."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .path_kernel import CoupledBatch, SdeModel


class PayoffKind(enum.Enum):
    EUROPEAN_CALL = "european_call"
    PARTIAL_LOOKBACK_CALL = "partial_lookback_call"


@dataclass(frozen=True)
class PayoffSpec:
    kind: PayoffKind
    rate: float
    horizon: float
    strike: float | None = None
    zeta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PayoffKind(self.kind))
        if self.kind is PayoffKind.EUROPEAN_CALL:
            if self.strike is None or not self.strike > 0:
                raise ValueError("european call needs a positive strike")
        elif self.zeta is None or not self.zeta >= 1:
            raise ValueError("partial lookback needs zeta >= 1")

    @property
    def needs_min(self) -> bool:
        return self.kind is PayoffKind.PARTIAL_LOOKBACK_CALL

    @property
    def discount(self) -> float:
        return math.exp(-self.rate * self.horizon)

    def __call__(self, x_T, x_min=None):
        if self.kind is PayoffKind.EUROPEAN_CALL:
            return european_call(x_T, self)
        if x_min is None:
            raise ValueError("partial lookback payoff needs the path minimum")
        return partial_lookback_call(x_T, x_min, self)

    @classmethod
    def european_call(cls, strike: float, rate: float, horizon: float) -> "PayoffSpec":
        return cls(PayoffKind.EUROPEAN_CALL, rate, horizon, strike=strike)

    @classmethod
    def partial_lookback_call(cls, zeta: float, rate: float, horizon: float) -> "PayoffSpec":
        return cls(PayoffKind.PARTIAL_LOOKBACK_CALL, rate, horizon, zeta=zeta)


def european_call(x_T, spec: PayoffSpec):
    return spec.discount * np.maximum(np.asarray(x_T, dtype=float) - spec.strike, 0.0)


def partial_lookback_call(x_T, x_min, spec: PayoffSpec):
    x_T = np.asarray(x_T, dtype=float)
    return spec.discount * np.maximum(x_T - spec.zeta * np.asarray(x_min, dtype=float), 0.0)


def batch_payoffs(payoff, batch: CoupledBatch) -> tuple[np.ndarray, np.ndarray | None]:
    """Fine and coarse payoffs of a simulated batch (coarse is None on level 1).

    ``payoff`` is a :class:`PayoffSpec` or any callable ``f(x_T, x_min)``.
    """
    fine = np.broadcast_to(np.asarray(payoff(batch.fine_terminal, batch.fine_min), dtype=float), batch.fine_terminal.shape)
    if batch.coarse_terminal is None:
        return fine, None
    coarse = np.broadcast_to(np.asarray(payoff(batch.coarse_terminal, batch.coarse_min), dtype=float), batch.coarse_terminal.shape)
    return fine, coarse


def black_scholes_call(x0: float, strike: float, rate: float, vol: float, horizon: float) -> float:
    sd = vol * math.sqrt(horizon)
    d1 = (math.log(x0 / strike) + (rate + 0.5 * vol * vol) * horizon) / sd
    d2 = d1 - sd
    return float(x0 * norm.cdf(d1) - strike * math.exp(-rate * horizon) * norm.cdf(d2))


@dataclass(frozen=True)
class ReferencePrice:
    payoff_id: str
    value: float
    source: str  # "published" or "analytic"


def payoff_id(spec: PayoffSpec, model: SdeModel) -> str:
    params = dict(model.params)
    parts = [spec.kind.value, f"x0={model.x0:g}", f"r={spec.rate:g}", f"vol={params.get('vol', float('nan')):g}", f"T={spec.horizon:g}"]
    if spec.kind is PayoffKind.EUROPEAN_CALL:
        parts.append(f"K={spec.strike:g}")
    else:
        parts.append(f"zeta={spec.zeta:g}")
    return ",".join(parts)


_PUBLISHED = {
    "european_call,x0=100,r=0.06,vol=0.4,T=1,K=80": 29.4987,
    "partial_lookback_call,x0=100,r=0.15,vol=0.1,T=1,zeta=1.1": 8.89343,
}

_REGISTRY: dict[str, ReferencePrice] = {k: ReferencePrice(k, v, "published") for k, v in _PUBLISHED.items()}


def _sig4(x: float) -> float:
    return float(f"{x:.4g}")


def register_analytic(pid: str, value: float) -> ReferencePrice:
    """Add an analytic price; it must agree with a published entry to 4 s.f."""
    existing = _REGISTRY.get(pid)
    if existing is not None and existing.source == "published":
        if _sig4(existing.value) != _sig4(value):
            raise ValueError(f"analytic {value} disagrees with published {existing.value} for {pid}")
        return existing
    ref = ReferencePrice(pid, float(value), "analytic")
    _REGISTRY[pid] = ref
    return ref


def reference_price(pid: str | tuple[PayoffSpec, SdeModel]) -> ReferencePrice:
    if isinstance(pid, tuple):
        pid = payoff_id(*pid)
    try:
        return _REGISTRY[pid]
    except KeyError:
        raise KeyError(f"no reference price registered for {pid!r}") from None


def registered_ids() -> list[str]:
    return sorted(_REGISTRY)
