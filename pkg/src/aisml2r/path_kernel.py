"""Coupled coarse/fine path simulation for scalar SDEs.

The fine path of level ``l`` takes ``n_1 * M**(l-1)`` uniform steps, the
coarse path ``n_1 * M**(l-2)``; both are driven by the same Brownian
increments (a coarse increment is the sum of its ``M`` fine increments).
A drift shift ``theta`` simulates the SDE driven by ``B_t = W_t + theta t``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .streams import RngStream

ArrayLike = float | np.ndarray


class NonFiniteSampleError(FloatingPointError):
    """Raised when a simulated state is NaN or infinite."""

    def __init__(self, message: str, **context):
        self.context = context
        detail = ", ".join(f"{k}={v}" for k, v in context.items())
        super().__init__(f"{message} ({detail})" if detail else message)


class Scheme(enum.Enum):
    EULER = "euler"
    MILSTEIN = "milstein"

    @property
    def beta(self) -> float:
        """Strong rate in the squared-L2 convention."""
        return 1.0 if self is Scheme.EULER else 2.0

    @classmethod
    def parse(cls, value: "Scheme | str") -> "Scheme":
        return value if isinstance(value, cls) else cls(str(value).lower())


@dataclass(frozen=True)
class SdeModel:
    """dX = b(X, t) dt + sigma(X, t) dW on [0, horizon]."""

    drift: Callable[[ArrayLike, float], ArrayLike]
    diffusion: Callable[[ArrayLike, float], ArrayLike]
    diffusion_derivative: Callable[[ArrayLike, float], ArrayLike]
    x0: float
    horizon: float
    name: str = "sde"
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


def gbm(x0: float, rate: float, vol: float, horizon: float) -> SdeModel:
    """Geometric Brownian motion dX = X (r dt + vol dW)."""
    return SdeModel(
        drift=lambda x, t: rate * x,
        diffusion=lambda x, t: vol * x,
        diffusion_derivative=lambda x, t: vol + 0.0 * x,
        x0=float(x0),
        horizon=float(horizon),
        name="gbm",
        params=(("rate", float(rate)), ("vol", float(vol))),
    )


def euler_step(x: ArrayLike, t: float, h: float, dW: ArrayLike, model: SdeModel, theta: ArrayLike = 0.0) -> ArrayLike:
    """x + (b + theta sigma) h + sigma dW."""
    sig = model.diffusion(x, t)
    return x + (model.drift(x, t) + theta * sig) * h + sig * dW


def milstein_step(x: ArrayLike, t: float, h: float, dW: ArrayLike, model: SdeModel, theta: ArrayLike = 0.0) -> ArrayLike:
    """Milstein step on the shifted increment dB = dW + theta h."""
    sig = model.diffusion(x, t)
    dB = dW + theta * h
    return (
        x
        + model.drift(x, t) * h
        + sig * dB
        + 0.5 * model.diffusion_derivative(x, t) * sig * (dB * dB - h)
    )


_STEPS = {Scheme.EULER: euler_step, Scheme.MILSTEIN: milstein_step}


def step(scheme: Scheme, x, t, h, dW, model, theta=0.0):
    return _STEPS[scheme](x, t, h, dW, model, theta)


def brownian_bridge_min(x_n: ArrayLike, x_next: ArrayLike, vol_level: ArrayLike, h: float, u: ArrayLike) -> ArrayLike:
    """Sample the minimum of a Brownian bridge between two grid values.

    ``vol_level`` is the diffusion frozen at the left endpoint; ``u`` must lie
    in (0, 1].
    """
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0.0) or np.any(u > 1.0):
        raise ValueError("bridge uniforms must lie in (0, 1]")
    dx = x_next - x_n
    radicand = dx * dx - 2.0 * (vol_level * vol_level) * h * np.log(u)
    out = 0.5 * (x_n + x_next - np.sqrt(radicand))
    # Rounding can leave the result a few ulps above the endpoints when u == 1.
    return np.minimum(out, np.minimum(x_n, x_next))


@dataclass(frozen=True)
class CoupledPathSample:
    level: int
    fine_terminal: float
    coarse_terminal: float | None
    brownian_terminal: float
    theta_used: float
    fine_min: float | None = None
    coarse_min: float | None = None


@dataclass(frozen=True)
class CoupledBatch:
    """Column-wise version of :class:`CoupledPathSample` for many paths."""

    level: int
    fine_terminal: np.ndarray
    coarse_terminal: np.ndarray | None
    brownian_terminal: np.ndarray
    theta_used: np.ndarray
    fine_min: np.ndarray | None = None
    coarse_min: np.ndarray | None = None

    def __len__(self) -> int:
        return self.fine_terminal.shape[0]

    def row(self, i: int) -> CoupledPathSample:
        pick = lambda a: None if a is None else float(a[i])
        return CoupledPathSample(
            level=self.level,
            fine_terminal=float(self.fine_terminal[i]),
            coarse_terminal=pick(self.coarse_terminal),
            brownian_terminal=float(self.brownian_terminal[i]),
            theta_used=float(self.theta_used[i]),
            fine_min=pick(self.fine_min),
            coarse_min=pick(self.coarse_min),
        )

    def take(self, sl: slice) -> "CoupledBatch":
        cut = lambda a: None if a is None else a[sl]
        return CoupledBatch(
            self.level,
            self.fine_terminal[sl],
            cut(self.coarse_terminal),
            self.brownian_terminal[sl],
            self.theta_used[sl],
            cut(self.fine_min),
            cut(self.coarse_min),
        )

    @classmethod
    def concat(cls, parts: list["CoupledBatch"]) -> "CoupledBatch":
        first = parts[0]
        join = lambda name: None if getattr(first, name) is None else np.concatenate([getattr(p, name) for p in parts])
        return cls(
            first.level,
            join("fine_terminal"),
            join("coarse_terminal"),
            join("brownian_terminal"),
            join("theta_used"),
            join("fine_min"),
            join("coarse_min"),
        )


def coarsest_steps(model: SdeModel, coarsest_h: float) -> int:
    n1 = model.horizon / coarsest_h
    n1_int = int(round(n1))
    if n1_int < 1 or abs(n1 - n1_int) > 1e-9 * max(1.0, n1):
        raise ValueError(f"coarsest step {coarsest_h} does not divide horizon {model.horizon}")
    return n1_int


def level_steps(model: SdeModel, level: int, M: int, coarsest_h: float) -> tuple[int, int]:
    """(fine steps, coarse steps) on a level; coarse is 0 on level 1."""
    n1 = coarsest_steps(model, coarsest_h)
    fine = n1 * M ** (level - 1)
    return fine, (fine // M if level > 1 else 0)


def simulate_increments(
    model: SdeModel,
    scheme: Scheme,
    level: int,
    M: int,
    coarsest_h: float,
    theta: ArrayLike,
    dW: np.ndarray,
    u: np.ndarray | None = None,
) -> CoupledBatch:
    """Run the coupled pair on explicit fine increments.

    ``dW`` has shape ``(n_fine, n_paths)`` and holds Brownian increments (already
    scaled by the root of the fine step).  ``u`` (same shape) switches on the
    bridge minimum.  The coarse minimum is the fine one.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    if M < 2:
        raise ValueError("refinement factor M must be >= 2")
    scheme = Scheme.parse(scheme)
    n_fine, n_coarse = level_steps(model, level, M, coarsest_h)
    dW = np.asarray(dW, dtype=float)
    if dW.ndim == 1:
        dW = dW[:, None]
    if dW.shape[0] != n_fine:
        raise ValueError(f"expected {n_fine} fine increments per path, got {dW.shape[0]}")
    n_paths = dW.shape[1]
    h_f = coarsest_h / M ** (level - 1)
    h_c = h_f * M
    theta_arr = np.broadcast_to(np.asarray(theta, dtype=float), (n_paths,))
    # A constant shift is applied as a scalar; elementwise results are identical.
    if n_paths == 0:
        th = 0.0
    elif np.all(theta_arr == theta_arr[0]):
        th = float(theta_arr[0])
    else:
        th = theta_arr

    xf = np.full(n_paths, model.x0)
    xc = np.full(n_paths, model.x0) if level > 1 else None
    fmin = np.full(n_paths, model.x0) if u is not None else None
    dWc = np.zeros(n_paths)
    stepper = _STEPS[scheme]
    for j in range(n_fine):
        t = j * h_f
        x_next = stepper(xf, t, h_f, dW[j], model, th)
        if fmin is not None:
            bmin = brownian_bridge_min(xf, x_next, model.diffusion(xf, t), h_f, u[j])
            np.minimum(fmin, bmin, out=fmin)
        xf = x_next
        if xc is not None:
            dWc += dW[j]
            if (j + 1) % M == 0:
                xc = stepper(xc, t + h_f - h_c, h_c, dWc, model, th)
                dWc = np.zeros(n_paths)

    finite = np.isfinite(xf) if xc is None else np.isfinite(xf) & np.isfinite(xc)
    if not np.all(finite):
        bad = int(np.flatnonzero(~finite)[0])
        raise NonFiniteSampleError("non-finite state in path simulation", level=level, scheme=scheme.value, first_bad=bad)
    return CoupledBatch(
        level=level,
        fine_terminal=xf,
        coarse_terminal=xc,
        brownian_terminal=dW.sum(axis=0),
        theta_used=np.array(theta_arr, dtype=float),
        fine_min=fmin,
        coarse_min=None if (fmin is None or level == 1) else fmin.copy(),
    )


def simulate_paths(
    model: SdeModel,
    scheme: Scheme,
    level: int,
    M: int,
    coarsest_h: float,
    theta: ArrayLike,
    track_min: bool,
    stream: RngStream,
    start: int,
    stop: int,
) -> CoupledBatch:
    """Simulate paths ``start..stop-1`` of a level from the keyed stream.

    ``theta`` is a scalar or an array of length ``stop - start`` (one drift
    shift per path).
    """
    if not 0 <= start <= stop:
        raise ValueError("need 0 <= start <= stop")
    n_fine, _ = level_steps(model, level, M, coarsest_h)
    h_f = coarsest_h / M ** (level - 1)
    sqrt_h = math.sqrt(h_f)
    B = stream.block_size
    theta_all = np.broadcast_to(np.asarray(theta, dtype=float), (stop - start,))
    parts = []
    for block in range(start // B, -(-stop // B)):
        lo = max(start, block * B) - block * B
        hi = min(stop, (block + 1) * B) - block * B
        z, u = stream.draws(block, n_fine, track_min)
        th_block = np.zeros(B)
        th_block[lo:hi] = theta_all[block * B + lo - start : block * B + hi - start]
        batch = simulate_increments(model, scheme, level, M, coarsest_h, th_block, z * sqrt_h, u)
        parts.append(batch.take(slice(lo, hi)))
    if not parts:
        return simulate_increments(model, scheme, level, M, coarsest_h, 0.0, np.zeros((n_fine, 0)), np.zeros((n_fine, 0)) if track_min else None)
    return CoupledBatch.concat(parts) if len(parts) > 1 else parts[0]


def simulate_coupled_pair(
    model: SdeModel,
    scheme: Scheme,
    level: int,
    M: int,
    coarsest_h: float,
    theta: float,
    track_min: bool,
    rng: RngStream,
    path: int = 0,
) -> CoupledPathSample:
    """Single coupled sample for path index ``path`` of the stream."""
    return simulate_paths(model, scheme, level, M, coarsest_h, theta, track_min, rng, path, path + 1).row(0)
