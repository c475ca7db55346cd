"""ML2R, adaptive importance-sampling ML2R and crude Monte Carlo drivers."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .adaptive_is import (
    GradientSample,
    RobbinsMonroConfig,
    ThetaSchedule,
    compute_k_l,
    trajectory,
)
from .calibration import Branch, LevelPlan, StructuralParams
from .girsanov import girsanov_minus
from .path_kernel import Scheme, SdeModel, simulate_paths
from .payoffs import ReferencePrice, batch_payoffs
from .streams import RngStream, Streams


@dataclass
class EstimateResult:
    estimator: str
    estimate: float
    level_means: tuple[float, ...]
    level_vars: tuple[float, ...]
    level_counts: tuple[int, ...]
    cost: float
    wall_time: float = 0.0
    plan: dict | None = None
    theta: ThetaSchedule | None = None

    @property
    def estimator_variance(self) -> float:
        """Plug-in variance of the estimate from the per-level sample variances."""
        if self.plan is None:
            return self.level_vars[0] / self.level_counts[0]
        Wt = self.plan["weights"]["W_tilde"]
        return float(sum(w * w * v / n for w, v, n in zip(Wt, self.level_vars, self.level_counts)))

    def to_dict(self, with_time: bool = True) -> dict:
        d = {
            "estimator": self.estimator,
            "estimate": self.estimate,
            "level_means": list(self.level_means),
            "level_vars": list(self.level_vars),
            "level_counts": list(self.level_counts),
            "cost": self.cost,
            "plan": self.plan,
            "theta": None if self.theta is None else self.theta.to_dict(),
        }
        if with_time:
            d["wall_time"] = self.wall_time
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateResult":
        return cls(
            d["estimator"],
            d["estimate"],
            tuple(d["level_means"]),
            tuple(d["level_vars"]),
            tuple(d["level_counts"]),
            d["cost"],
            d.get("wall_time", 0.0),
            d.get("plan"),
            None if d.get("theta") is None else ThetaSchedule.from_dict(d["theta"]),
        )


class _Running:
    """Mean and sum of squared deviations, merged chunk by chunk in order."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x: np.ndarray):
        nb = x.size
        if nb == 0:
            return
        mb = float(np.mean(x))
        m2b = float(np.sum((x - mb) ** 2))
        n = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / n
        self.m2 += m2b + delta * delta * self.n * nb / n
        self.n = n

    @property
    def var(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0


def _level_terms(model, payoff, scheme, level, M, h, theta, stream: RngStream, start, stop) -> tuple[np.ndarray, np.ndarray]:
    """Reweighted level terms and W_T for paths ``start..stop-1``."""
    needs_min = getattr(payoff, "needs_min", False)
    batch = simulate_paths(model, scheme, level, M, h, theta, needs_min, stream, start, stop)
    fine, coarse = batch_payoffs(payoff, batch)
    terms = fine if coarse is None else fine - coarse
    if np.isscalar(theta) and theta == 0.0:
        return terms, batch.brownian_terminal
    return terms * girsanov_minus(batch.brownian_terminal, np.asarray(theta), model.horizon), batch.brownian_terminal


def _chunks(stream: RngStream, n: int):
    B = stream.block_size
    for lo in range(0, n, B):
        yield lo, min(n, lo + B)


def _combine(plan: LevelPlan, stats: list[_Running], weights=None) -> float:
    Wt = plan.weights.W_tilde if weights is None else weights
    return float(stats[0].mean + sum(Wt[l] * stats[l].mean for l in range(1, len(stats))))


def run_ml2r(
    model: SdeModel,
    payoff,
    scheme: Scheme,
    plan: LevelPlan,
    rng: Streams,
    *,
    weights=None,
) -> EstimateResult:
    """Multilevel Richardson-Romberg estimate under the original measure.

    ``weights`` overrides W~ (pass all ones for plain multilevel MC).
    """
    scheme = Scheme.parse(scheme)
    t0 = time.perf_counter()
    stats = []
    for l in range(1, plan.L + 1):
        stream = rng.level(l)
        acc = _Running()
        for lo, hi in _chunks(stream, plan.N_l[l - 1]):
            acc.add(_level_terms(model, payoff, scheme, l, plan.M, plan.h, 0.0, stream, lo, hi)[0])
        stats.append(acc)
    estimate = _combine(plan, stats, weights)
    return EstimateResult(
        "ml2r",
        estimate,
        tuple(s.mean for s in stats),
        tuple(s.var for s in stats),
        tuple(s.n for s in stats),
        plan.cost(model),
        time.perf_counter() - t0,
        plan.to_dict(),
    )


def _gradient_samples(model, payoff, scheme, level, plan: LevelPlan, stream, n, branch, k_l) -> list[GradientSample]:
    """Original-measure samples on the first ``n`` paths of the level."""
    terms, W = _level_terms(model, payoff, scheme, level, plan.M, plan.h, 0.0, stream, 0, n)
    if branch is Branch.BETA_LE_1 and level > 1:
        h_l = plan.h / plan.M ** (level - 1)
        terms = terms * h_l ** (-scheme.beta / 2.0)
    return [GradientSample(level, branch, float(v), float(w), k_l) for v, w in zip(terms, W)]


def run_aisml2r(
    model: SdeModel,
    payoff,
    scheme: Scheme,
    plan: LevelPlan,
    theta_init: ThetaSchedule,
    rng: Streams,
    sp: StructuralParams,
    rm: RobbinsMonroConfig = RobbinsMonroConfig(),
) -> EstimateResult:
    """ML2R with a per-level drift shift learned along the run.

    Path ``k`` of level ``l`` is simulated under the averaged shift obtained
    from paths ``0..k-1``; the same Brownian increments, taken under the
    original measure, feed the Robbins-Monro update.  After ``rm.n_iter``
    updates the averaged shift is frozen for the rest of the level.
    """
    scheme = Scheme.parse(scheme)
    branch = Branch.for_beta(scheme.beta)
    t0 = time.perf_counter()
    stats, finals = [], []
    for l in range(1, plan.L + 1):
        stream = rng.level(l)
        n_l = plan.N_l[l - 1]
        n_rm = min(rm.n_iter, n_l)
        k_l = compute_k_l(l, sp, plan.weights) if (branch is Branch.BETA_GT_1 and rm.use_k) else 1.0
        state = rm.state(l, theta_init.initial[l - 1])
        samples = _gradient_samples(model, payoff, scheme, l, plan, stream, n_rm, branch, k_l)
        used = trajectory(state, samples, model.horizon)
        theta_path = np.full(n_l, state.theta_bar)
        theta_path[:n_rm] = used
        acc = _Running()
        for lo, hi in _chunks(stream, n_l):
            th = theta_path[lo:hi]
            acc.add(_level_terms(model, payoff, scheme, l, plan.M, plan.h, th, stream, lo, hi)[0])
        stats.append(acc)
        finals.append(state.theta_bar)
    estimate = _combine(plan, stats)
    return EstimateResult(
        "aisml2r",
        estimate,
        tuple(s.mean for s in stats),
        tuple(s.var for s in stats),
        tuple(s.n for s in stats),
        plan.cost(model),
        time.perf_counter() - t0,
        plan.to_dict(),
        ThetaSchedule(tuple(theta_init.initial), tuple(finals)),
    )


def run_crude_mc(model: SdeModel, payoff, scheme: Scheme, n_steps: int, n_paths: int, rng: Streams) -> EstimateResult:
    """Single-level Monte Carlo on a grid of ``n_steps`` uniform steps."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    scheme = Scheme.parse(scheme)
    t0 = time.perf_counter()
    h = model.horizon / n_steps
    stream = rng.level(1)
    acc = _Running()
    for lo, hi in _chunks(stream, n_paths):
        acc.add(_level_terms(model, payoff, scheme, 1, 2, h, 0.0, stream, lo, hi)[0])
    return EstimateResult(
        "crude",
        acc.mean,
        (acc.mean,),
        (acc.var,),
        (acc.n,),
        float(n_paths * n_steps),
        time.perf_counter() - t0,
        None,
    )


@dataclass(frozen=True)
class Summary:
    R: int
    mean: float
    bias: float
    variance: float
    rmse: float
    cost: float
    time: float


def estimate_bias_variance(results: list[EstimateResult], reference: ReferencePrice | float) -> Summary:
    """Bias, cross-replication variance and RMSE against a reference price."""
    if len(results) < 2:
        raise ValueError("need at least two replications for a variance")
    ref = reference.value if isinstance(reference, ReferencePrice) else float(reference)
    est = np.array([r.estimate for r in results])
    mean = float(np.mean(est))
    bias = abs(mean - ref)
    var = float(np.var(est, ddof=1))
    return Summary(
        len(results),
        mean,
        bias,
        var,
        math.sqrt(bias * bias + var),
        float(np.mean([r.cost for r in results])),
        float(np.mean([r.wall_time for r in results])),
    )


def improvement_factor(var_base: float, effort_base: float, var_new: float, effort_new: float) -> float:
    """(variance x effort) of the baseline over that of the new estimator."""
    return (var_base * effort_base) / (var_new * effort_new)
