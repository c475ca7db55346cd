"""Extrapolation weights, pilot estimation of structural constants, and the
optimal (L, mu, N) planner for the multilevel Richardson-Romberg estimator."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass

import mpmath
import numpy as np

from .girsanov import girsanov_minus
from .path_kernel import Scheme, SdeModel, level_steps, simulate_paths
from .payoffs import batch_payoffs
from .streams import RngStream

MAX_DEPTH = 15
WEIGHT_RESIDUAL_TOL = 1e-10


class ConditioningError(ValueError):
    pass


class Branch(enum.Enum):
    BETA_GT_1 = "beta_gt_1"
    BETA_LE_1 = "beta_le_1"

    @classmethod
    def for_beta(cls, beta: float) -> "Branch":
        return cls.BETA_GT_1 if beta > 1 else cls.BETA_LE_1


@dataclass(frozen=True)
class WeightSet:
    alpha: float
    M: int
    L: int
    w: tuple[float, ...]
    W_tilde: tuple[float, ...]
    residual: float = 0.0

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "M": self.M, "L": self.L, "w": list(self.w), "W_tilde": list(self.W_tilde), "residual": self.residual}

    @classmethod
    def from_dict(cls, d: dict) -> "WeightSet":
        return cls(d["alpha"], d["M"], d["L"], tuple(d["w"]), tuple(d["W_tilde"]), d.get("residual", 0.0))


def vandermonde(alpha: float, M: int, L: int) -> np.ndarray:
    """V[i, j] = n_j^(-alpha i) with n_j = M^j, i, j = 0..L-1."""
    nodes = float(M) ** (-alpha * np.arange(L))
    return nodes[None, :] ** np.arange(L)[:, None]


def solve_weights(alpha: float, M: int, L: int) -> WeightSet:
    """Solve V w = e_1 and form the suffix sums W~_l = sum_{j >= l} w_j.

    The system is solved by pivoted LU in extended precision (the working
    precision grows with the dynamic range of V, whose smallest entry is
    M^(-alpha (L-1)^2)); the residual is then checked in double precision.
    """
    if L < 1:
        raise ValueError("depth L must be >= 1")
    if L > MAX_DEPTH:
        raise ConditioningError(f"depth L={L} exceeds the conditioning cap {MAX_DEPTH}")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if M < 2:
        raise ValueError("M must be >= 2")
    dps = 40 + math.ceil(alpha * math.log10(M) * (L - 1) ** 2)
    with mpmath.workdps(dps):
        nodes = [mpmath.mpf(M) ** (-mpmath.mpf(alpha) * j) for j in range(L)]
        V = mpmath.matrix(L, L)
        for i in range(L):
            for j in range(L):
                V[i, j] = nodes[j] ** i
        rhs = mpmath.matrix([1] + [0] * (L - 1))
        sol = mpmath.lu_solve(V, rhs)
        suffix = [mpmath.fsum(sol[j] for j in range(l, L)) for l in range(L)]
        w = tuple(float(x) for x in sol)
        W_tilde = tuple(float(x) for x in suffix)
    e1 = np.zeros(L)
    e1[0] = 1.0
    residual = float(np.max(np.abs(vandermonde(alpha, M, L) @ np.array(w) - e1)))
    if residual > WEIGHT_RESIDUAL_TOL:
        raise ConditioningError(f"weight residual {residual:.3e} above tolerance for alpha={alpha}, M={M}, L={L}")
    return WeightSet(float(alpha), int(M), int(L), w, W_tilde, residual)


def weight_sequences(alpha: float, M: int, n_terms: int = 400) -> tuple[np.ndarray, np.ndarray]:
    """The sequences a_l (l = 1..n) and b_l (l = 0..n) bounding the weights."""
    q = float(M) ** (-alpha)
    k = np.arange(1, n_terms)
    prods = np.concatenate([[1.0], np.cumprod(1.0 - q**k)])  # prod_{k=1}^{l-1}, l = 1..n
    a = 1.0 / prods
    l = np.arange(n_terms)
    # b_l uses the same product over k = 1..l-1 (empty for l = 0, 1).
    denom = np.concatenate([[1.0], prods[:-1]])
    b = (-1.0) ** l * q ** (l * (l + 1) / 2.0) / denom
    return a, b


def weight_bound(alpha: float, M: int) -> float:
    """a_inf * B~_inf, a uniform bound on |W~_l| over all depths."""
    a, b = weight_sequences(alpha, M)
    return float(a[-1] * np.sum(np.abs(b)))


def C_under(M: int, beta: float) -> float:
    return (1.0 + M ** (beta / 2.0)) / math.sqrt(1.0 + 1.0 / M)


def C_over(M: int, beta: float) -> float:
    return (1.0 + M ** (beta / 2.0)) * math.sqrt(1.0 + 1.0 / M)


@dataclass(frozen=True)
class StructuralParams:
    alpha: float
    beta: float
    V1: float
    var_Y0: float
    M: int
    coarsest_h: float = 1.0
    c_inf: float = 1.0
    A: float = 1.0

    @property
    def lam(self) -> float:
        return math.sqrt(self.V1 / self.var_Y0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = self.lam
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StructuralParams":
        return cls(**{k: d[k] for k in ("alpha", "beta", "V1", "var_Y0", "M", "coarsest_h", "c_inf", "A")})


@dataclass(frozen=True)
class LevelPlan:
    eps: float
    L: int
    h: float
    mu: tuple[float, ...]
    N: int
    N_l: tuple[int, ...]
    weights: WeightSet
    q_star: float
    M: int

    def steps(self, model: SdeModel, level: int) -> tuple[int, int]:
        return level_steps(model, level, self.M, self.h)

    def cost(self, model: SdeModel) -> float:
        """Total time steps simulated: sum_l N_l (n_{l-1} + n_l)."""
        return float(sum(n * sum(self.steps(model, l + 1)) for l, n in enumerate(self.N_l)))

    def scaled(self, factor: int) -> "LevelPlan":
        """Same allocation with every level count multiplied by ``factor``."""
        return LevelPlan(self.eps, self.L, self.h, self.mu, self.N * factor, tuple(n * factor for n in self.N_l), self.weights, self.q_star, self.M)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "L": self.L,
            "h": self.h,
            "mu": list(self.mu),
            "N": self.N,
            "N_l": list(self.N_l),
            "weights": self.weights.to_dict(),
            "q_star": self.q_star,
            "M": self.M,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LevelPlan":
        return cls(d["eps"], d["L"], d["h"], tuple(d["mu"]), d["N"], tuple(d["N_l"]), WeightSet.from_dict(d["weights"]), d["q_star"], d["M"])


def optimal_depth(eps: float, sp: StructuralParams) -> float:
    """Unrounded depth from the closed-form optimum."""
    logM = math.log(sp.M)
    base = 0.5 + math.log(sp.c_inf ** (1.0 / sp.alpha) * sp.coarsest_h) / logM
    return base + math.sqrt(base * base + 2.0 * math.log(sp.A / eps) / (sp.alpha * logM))


def plan(eps: float, sp: StructuralParams) -> LevelPlan:
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not sp.var_Y0 > 0:
        raise ValueError("var_Y0 must be positive to plan")
    depth = optimal_depth(eps, sp)
    # Snap values within rounding of an integer before the ceiling.
    L = math.ceil(depth - 1e-9 * max(1.0, abs(depth)))
    if L < 1:
        warnings.warn(f"eps={eps} gives depth {depth:.3f} < 1; clamping L to 1", RuntimeWarning, stacklevel=2)
        L = 1
    weights = solve_weights(sp.alpha, sp.M, L)
    lam_h = sp.lam * sp.coarsest_h ** (sp.beta / 2.0)
    Wt = np.abs(np.array(weights.W_tilde))
    levels = np.arange(2, L + 1)
    raw = np.empty(L)
    raw[0] = 1.0 + lam_h
    raw[1:] = lam_h * C_under(sp.M, sp.beta) * Wt[1:] * float(sp.M) ** (-(1.0 + sp.beta) * (levels - 1) / 2.0)
    q_star = 1.0 / raw.sum()
    mu = raw * q_star
    spread = lam_h * C_over(sp.M, sp.beta) * float(np.sum(Wt[1:] * float(sp.M) ** ((1.0 - sp.beta) * (levels - 1) / 2.0)))
    N_real = (1.0 + 1.0 / (2.0 * sp.alpha * L)) * sp.var_Y0 * (1.0 + lam_h + spread) / (eps * eps * q_star)
    N = int(math.ceil(N_real))
    N_l = tuple(max(1, int(math.ceil(N * m))) for m in mu)
    return LevelPlan(float(eps), L, sp.coarsest_h, tuple(float(m) for m in mu), N, N_l, weights, float(q_star), sp.M)


def _warn_if_degenerate(name: str, moment: float, payoff_values: np.ndarray):
    if moment == 0.0 and payoff_values.size and np.ptp(payoff_values) > 0:
        warnings.warn(f"{name} pilot estimate is zero for a non-constant payoff; increase the pilot size", RuntimeWarning, stacklevel=3)


def estimate_V1(
    model: SdeModel,
    payoff,
    scheme: Scheme,
    coarsest_h: float,
    n_pilot: int,
    rng: RngStream,
    *,
    M_max: int = 10,
    theta: float = 0.0,
    beta: float | None = None,
) -> float:
    """Strong-error constant from coupled (h, h/M_max) pilot pairs.

    With ``theta != 0`` the differences are simulated under the shifted drift
    and reweighted by the Girsanov density.
    """
    scheme = Scheme.parse(scheme)
    beta = scheme.beta if beta is None else beta
    needs_min = getattr(payoff, "needs_min", False)
    batch = simulate_paths(model, scheme, 2, M_max, coarsest_h, theta, needs_min, rng, 0, n_pilot)
    fine, coarse = batch_payoffs(payoff, batch)
    diff = (fine - coarse) * girsanov_minus(batch.brownian_terminal, theta, model.horizon)
    moment = float(np.mean(diff * diff))
    _warn_if_degenerate("V1", moment, fine)
    return (1.0 + M_max ** (-beta / 2.0)) ** -2 * coarsest_h ** (-beta) * moment


def estimate_var_Y0(
    model: SdeModel,
    payoff,
    scheme: Scheme,
    coarsest_h: float,
    n_pilot: int,
    rng: RngStream,
    *,
    theta: float = 0.0,
) -> float:
    """Unbiased variance of the (reweighted) payoff on the coarsest grid."""
    if n_pilot < 2:
        raise ValueError("need at least two pilot paths")
    needs_min = getattr(payoff, "needs_min", False)
    batch = simulate_paths(model, Scheme.parse(scheme), 1, 2, coarsest_h, theta, needs_min, rng, 0, n_pilot)
    fine, _ = batch_payoffs(payoff, batch)
    values = fine * girsanov_minus(batch.brownian_terminal, theta, model.horizon)
    var = float(np.var(values, ddof=1))
    _warn_if_degenerate("Var(Y0)", var, fine)
    return var


def strong_rate_slope(
    model: SdeModel,
    payoff,
    scheme: Scheme,
    levels,
    M: int,
    coarsest_h: float,
    n_paths: int,
    streams,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares slope of log E[(P_fine - P_coarse)^2] against log h_l.

    Returns ``(slope, h, second_moments)``; ``streams`` provides one stream
    per level through ``streams.level(l)``.
    """
    needs_min = getattr(payoff, "needs_min", False)
    hs, moments = [], []
    for l in levels:
        if l < 2:
            raise ValueError("strong-rate levels start at 2")
        batch = simulate_paths(model, Scheme.parse(scheme), l, M, coarsest_h, 0.0, needs_min, streams.level(l), 0, n_paths)
        fine, coarse = batch_payoffs(payoff, batch)
        hs.append(coarsest_h / M ** (l - 1))
        moments.append(float(np.mean((fine - coarse) ** 2)))
    hs, moments = np.array(hs), np.array(moments)
    slope = float(np.polyfit(np.log(hs), np.log(moments), 1)[0])
    return slope, hs, moments


def clt_variance_diagnostic(
    sp: StructuralParams,
    per_level_varY,
    branch: Branch | str,
    c1: float | None = None,
) -> float:
    """Limit variance of (J - J0)/eps implied by per-level variances.

    For ``beta > 1`` ``per_level_varY[0]`` is Var(Y_h) and entries ``l >= 1``
    are Var(Y_{l+1}); the series is truncated at the supplied depth.  For
    ``beta <= 1`` the last entry stands in for v_inf.  ``c1`` selects the
    ``2 alpha == beta`` case.
    """
    branch = Branch(branch)
    v = np.asarray(per_level_varY, dtype=float)
    M, beta = sp.M, sp.beta
    if branch is Branch.BETA_GT_1:
        lam_h = sp.lam * sp.coarsest_h ** (beta / 2.0)
        r = M ** ((1.0 - beta) / 2.0)
        Sigma = 1.0 + lam_h * (1.0 + C_over(M, beta) * r / (1.0 - r))
        sigma1 = v[0] / (Sigma * sp.var_Y0 * (1.0 + lam_h))
        levels = np.arange(2, v.size + 1)
        tail = float(np.sum(r ** (levels - 1) * v[1:]))
        sigma2 = sp.coarsest_h ** (beta / 2.0) * tail / (Sigma * math.sqrt(sp.var_Y0 * sp.V1) * C_under(M, beta))
        return float(sigma1 + sigma2)
    v_inf = float(v[-1])
    scale = (1.0 + M ** (beta / 2.0)) ** -2 / sp.V1
    if math.isclose(2.0 * sp.alpha, beta):
        if c1 is None:
            raise ValueError("the 2*alpha == beta case needs the first weak-error coefficient c1")
        return (v_inf - c1 * c1 * (1.0 - M ** (beta / 2.0)) ** 2) * scale
    return v_inf * scale


def estimate_structural_params(
    model: SdeModel,
    payoff,
    scheme: Scheme,
    M: int,
    coarsest_h: float,
    n_pilot: int,
    v1_stream: RngStream,
    var_stream: RngStream,
    *,
    alpha: float = 1.0,
    c_inf: float = 1.0,
    A: float = 1.0,
    M_max: int = 10,
    theta: float = 0.0,
) -> StructuralParams:
    scheme = Scheme.parse(scheme)
    V1 = estimate_V1(model, payoff, scheme, coarsest_h, n_pilot, v1_stream, M_max=M_max, theta=theta)
    var = estimate_var_Y0(model, payoff, scheme, coarsest_h, n_pilot, var_stream, theta=theta)
    return StructuralParams(alpha, scheme.beta, V1, var, M, coarsest_h, c_inf, A)
