"""Per-level drift-shift optimisation by projected Robbins-Monro with
Ruppert-Polyak averaging.

On level ``l`` the objective is the second moment of the reweighted level
term, ``E[Z_l^2 J+(W_T, theta)]`` (scaled by ``k_l`` when beta > 1).  Its
stochastic gradient only needs samples under the original measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .calibration import Branch, C_over, C_under, StructuralParams, WeightSet
from .girsanov import girsanov_minus, girsanov_plus

__all__ = [
    "GradientSample",
    "ThetaState",
    "ThetaSchedule",
    "RobbinsMonroConfig",
    "girsanov_minus",
    "girsanov_plus",
    "compute_k_l",
    "gradient_G",
    "robbins_monro_run",
    "default_gain",
]


def default_gain(n: int) -> float:
    """gamma_n = 1 / (n + 1)."""
    return 1.0 / (n + 1.0)


@dataclass(frozen=True)
class GradientSample:
    """One original-measure sample of a level's payoff difference.

    ``value`` is Z_l (raw difference, or the level-1 payoff) on the beta > 1
    branch and Y_l = h_l^(-beta/2) Z_l on the beta <= 1 branch.
    """

    level: int
    branch: Branch
    value: float
    w_terminal: float
    k_l: float = 1.0


def gradient_G(theta: float, sample: GradientSample, T: float) -> float:
    """(theta T - W_T) * s * J+(W_T, theta) with s = k_l Z^2 or Y^2."""
    if sample.branch is Branch.BETA_GT_1:
        scale = sample.k_l * sample.value * sample.value
    else:
        scale = sample.value * sample.value
    if scale == 0.0:
        return 0.0
    return float((theta * T - sample.w_terminal) * scale * girsanov_plus(sample.w_terminal, theta, T))


def compute_k_l(level: int, sp: StructuralParams, weights: WeightSet) -> float:
    """Positive constant scaling the level objective (beta > 1 only)."""
    if not sp.beta > 1:
        raise ValueError("k_l is only defined on the beta > 1 branch")
    if level < 1 or level > weights.L:
        raise ValueError(f"level {level} outside 1..{weights.L}")
    if not (sp.V1 > 0 and sp.var_Y0 > 0):
        raise ValueError("k_l needs positive V1 and Var(Y0)")
    M, beta, h = sp.M, sp.beta, sp.coarsest_h
    lam_h = sp.lam * h ** (beta / 2.0)
    r = M ** ((1.0 - beta) / 2.0)
    Sigma = 1.0 + lam_h * (1.0 + C_over(M, beta) * r / (1.0 - r))
    if level == 1:
        return 1.0 / (Sigma * sp.var_Y0 * (1.0 + lam_h))
    k2 = h ** (beta / 2.0) / (Sigma * math.sqrt(sp.var_Y0 * sp.V1) * C_under(M, beta))
    return k2 * M ** ((1.0 + beta) * (level - 1) / 2.0) * abs(weights.W_tilde[level - 1]) * h ** (-beta)


@dataclass
class ThetaState:
    """Iterate, Ruppert-Polyak average and iteration count on one level."""

    level: int
    theta: float = 0.0
    theta_bar: float = field(default=None)
    k: int = 0
    lo: float = 0.0
    hi: float = 1.0
    gain: Callable[[int], float] = default_gain

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("empty parameter domain")
        self.theta = float(np.clip(self.theta, self.lo, self.hi))
        if self.theta_bar is None:
            self.theta_bar = self.theta

    def update(self, grad: float) -> float:
        self.theta = float(min(max(self.theta - self.gain(self.k + 1) * grad, self.lo), self.hi))
        self.k += 1
        self.theta_bar += (self.theta - self.theta_bar) / (self.k + 1)
        return self.theta


def robbins_monro_run(
    level: int,
    branch: Branch | str,
    sampler: Callable[[int], GradientSample],
    cfg: ThetaState,
    n_iter: int,
    T: float = 1.0,
) -> ThetaState:
    """Advance ``cfg`` by ``n_iter`` projected steps; sample ``i`` comes from
    ``sampler(i)``.  The state is updated in place and returned."""
    if n_iter <= 0:
        raise ValueError("n_iter must be positive")
    branch = Branch(branch)
    for i in range(n_iter):
        s = sampler(i)
        if s.branch is not branch or s.level != level:
            raise ValueError("sample does not match the requested level/branch")
        cfg.update(gradient_G(cfg.theta, s, T))
    return cfg


@dataclass(frozen=True)
class RobbinsMonroConfig:
    n_iter: int = 1000
    lo: float = 0.0
    hi: float = 1.0
    use_k: bool = True

    def state(self, level: int, theta0: float) -> ThetaState:
        return ThetaState(level=level, theta=theta0, lo=self.lo, hi=self.hi)


@dataclass(frozen=True)
class ThetaSchedule:
    """Per-level drift shifts: initial iterates and, after a run, averages."""

    initial: tuple[float, ...]
    final: tuple[float, ...] | None = None

    @classmethod
    def constant(cls, theta: float, L: int) -> "ThetaSchedule":
        return cls(tuple([float(theta)] * L))

    def to_dict(self) -> dict:
        return {"initial": list(self.initial), "final": None if self.final is None else list(self.final)}

    @classmethod
    def from_dict(cls, d: dict) -> "ThetaSchedule":
        return cls(tuple(d["initial"]), None if d.get("final") is None else tuple(d["final"]))


def trajectory(state: ThetaState, samples: list[GradientSample], T: float) -> np.ndarray:
    """Run the recursion over ``samples`` and return the averaged shift in
    force *before* each update (the shift used to simulate that sample)."""
    used = np.empty(len(samples))
    for i, s in enumerate(samples):
        used[i] = state.theta_bar
        state.update(gradient_G(state.theta, s, T))
    return used
