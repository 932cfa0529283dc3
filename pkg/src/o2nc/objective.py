"""Objectives, gradient oracles and the catalogue of test functions.

Every catalogue function carries the constants under which the convergence
results are stated: the Lipschitz constant ``G``, the smoothness constant
``H`` (gradient Lipschitz), the second-order smoothness constant ``J``
(Hessian Lipschitz) and the infimum ``F_star``. A constant that does not
exist (or is not known) is ``None``.

Non-smooth catalogue members return a fixed subgradient on their kink set:
``sign(0) = 0`` for the L1 valley and the lowest-index maximiser for the
max of affine functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from o2nc.seeding import derive_rng

Vector = np.ndarray

CATALOGUE = ("quadratic", "cosine_mixture", "sharp_valley", "max_affine")


@dataclass
class Objective:
    d: int
    value_fn: Callable[[Vector], float]
    grad_fn: Optional[Callable[[Vector], Vector]]
    G: Optional[float] = None
    H: Optional[float] = None
    J: Optional[float] = None
    F_star: Optional[float] = None
    x0_default: Optional[Vector] = None
    name: str = "objective"
    directional_fn: Optional[Callable[[Vector, Vector], Vector]] = None
    # Set only on randomized-smoothing wrappers.
    base: Optional["Objective"] = None
    smoothing_radius: Optional[float] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")
        if self.x0_default is None:
            self.x0_default = np.zeros(self.d)

    def value(self, x) -> float:
        return float(self.value_fn(np.asarray(x, dtype=float)))

    def grad(self, x) -> Vector:
        if self.grad_fn is None:
            raise ValueError(f"{self.name} has no exact gradient")
        return np.asarray(self.grad_fn(np.asarray(x, dtype=float)), dtype=float)

    @property
    def has_grad(self) -> bool:
        return self.grad_fn is not None

    def directional(self, w, v) -> Vector:
        """Element of the generalized gradient at ``w`` whose inner product
        with ``v`` is the one-sided directional derivative ``F'(w, v)``."""
        v = np.asarray(v, dtype=float)
        if not np.any(v):
            raise ValueError("direction must be non-zero")
        w = np.asarray(w, dtype=float)
        if self.directional_fn is None:
            return self.grad(w)
        return np.asarray(self.directional_fn(w, v), dtype=float)


@dataclass(frozen=True)
class NoiseModel:
    """Additive zero-mean oracle noise with ``E|noise|^2 = sigma^2``.

    ``gaussian`` spreads the variance evenly, ``sigma^2 / d`` per coordinate.
    ``sphere`` draws a uniformly random direction of norm exactly ``sigma``.
    """

    kind: str = "none"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "sphere"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def draw(self, d: int, rng: np.random.Generator) -> Vector:
        return self.draw_batch(d, 1, rng)[0]

    def draw_batch(self, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "none" or self.sigma == 0.0:
            return np.zeros((n, d))
        z = rng.standard_normal((n, d))
        if self.kind == "gaussian":
            return z * (self.sigma / math.sqrt(d))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        return self.sigma * z / norms

    @property
    def second_moment(self) -> float:
        return 0.0 if self.kind == "none" else self.sigma**2


@dataclass(frozen=True)
class OracleSample:
    w: Vector
    v: Optional[Vector]
    seed: int
    g: Vector


# -- oracles -----------------------------------------------------------------


class GradientOracle:
    """``O(w, z) = grad F(w) + noise(z)``."""

    kind = "stochastic"

    def __init__(self, objective: Objective, noise: NoiseModel | None = None):
        self.objective = objective
        self.noise = noise or NoiseModel()
        self.calls = 0

    def __call__(self, w: Vector, rng: np.random.Generator, v: Vector | None = None) -> Vector:
        self.calls += 1
        g = self.objective.grad(w)
        return g + self.noise.draw(self.objective.d, rng)

    def batch(self, w: Vector, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` independent oracle outputs at the same point."""
        self.calls += n
        return self.objective.grad(w)[None, :] + self.noise.draw_batch(self.objective.d, n, rng)


class DirectionalOracle(GradientOracle):
    """``O(w, v, z)``: a generalized-gradient element matching ``F'(w, v)``."""

    kind = "directional"

    def __call__(self, w: Vector, rng: np.random.Generator, v: Vector | None = None) -> Vector:
        self.calls += 1
        # F'(w, 0) = 0, so any generalized-gradient element works; use the gradient.
        if v is None or not np.any(v):
            g = self.objective.grad(w)
        else:
            g = self.objective.directional(w, v)
        return g + self.noise.draw(self.objective.d, rng)


class SmoothedOracle:
    """``O_hat(x, (z, u)) = O(x + p u, z)`` with ``u`` uniform on the unit ball."""

    kind = "smoothed"

    def __init__(self, inner: GradientOracle, p: float):
        if p <= 0:
            raise ValueError("smoothing radius must be positive")
        self.inner = inner
        self.p = float(p)
        self.objective = inner.objective

    @property
    def calls(self) -> int:
        return self.inner.calls

    def __call__(self, w: Vector, rng: np.random.Generator, v: Vector | None = None) -> Vector:
        u = unit_ball_draw(self.objective.d, rng)
        return self.inner(np.asarray(w) + self.p * u, rng, v)

    def batch(self, w: Vector, n: int, rng: np.random.Generator) -> np.ndarray:
        d = self.objective.d
        us = unit_ball_batch(d, n, rng)
        noise = self.inner.noise.draw_batch(d, n, rng)
        base = self.objective
        grads = np.stack([base.grad(np.asarray(w) + self.p * u) for u in us])
        self.inner.calls += n
        return grads + noise


def make_oracle(objective: Objective, noise: NoiseModel | None = None, directional: bool = False):
    """Oracle matching ``objective``; smoothed objectives get the
    perturbed-query wrapper around an oracle of their base function."""
    if objective.smoothing_radius is not None:
        return SmoothedOracle(make_oracle(objective.base, noise, directional), objective.smoothing_radius)
    cls = DirectionalOracle if directional else GradientOracle
    return cls(objective, noise)


def stochastic_gradient(obj: Objective, noise: NoiseModel, w, seed: int) -> OracleSample:
    w = np.asarray(w, dtype=float)
    g = GradientOracle(obj, noise)(w, derive_rng(seed, "oracle"))
    return OracleSample(w=w, v=None, seed=seed, g=g)


def directional_sample(obj: Objective, w, v, seed: int) -> OracleSample:
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    return OracleSample(w=w, v=v, seed=seed, g=obj.directional(w, v))


# -- unit ball and smoothing ---------------------------------------------------


def unit_ball_batch(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if d < 1:
        raise ValueError("dimension must be positive")
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = rng.random(n) ** (1.0 / d)
    return z * r[:, None]


def unit_ball_draw(d: int, rng: np.random.Generator) -> Vector:
    return unit_ball_batch(d, 1, rng)[0]


def sample_unit_ball(d: int, seed: int) -> Vector:
    """Uniform draw from the closed unit ball in ``R^d``, deterministic in ``seed``."""
    return unit_ball_draw(d, derive_rng(seed, "unit_ball"))


def smoothed_objective(obj: Objective, p: float, mc_samples: int = 256, seed: int = 0) -> Objective:
    """Monte-Carlo ``F_hat(x) = E_u F(x + p u)`` over a fixed draw of ``mc_samples``
    ball points (common random numbers, so ``F_hat`` is a deterministic function).

    Lipschitz constant is inherited; smoothness constants are dropped.
    """
    if p <= 0:
        raise ValueError("smoothing radius must be positive")
    if obj.G is None:
        raise ValueError("smoothing needs a Lipschitz objective (G metadata)")
    if mc_samples < 1:
        raise ValueError("mc_samples must be positive")
    offsets = p * unit_ball_batch(obj.d, mc_samples, derive_rng(seed, "smoothing"))

    def value(x):
        return float(np.mean([obj.value_fn(x + o) for o in offsets]))

    def grad(x):
        return np.mean([obj.grad_fn(x + o) for o in offsets], axis=0)

    return Objective(
        d=obj.d,
        value_fn=value,
        grad_fn=grad if obj.grad_fn is not None else None,
        G=obj.G,
        F_star=None,
        x0_default=obj.x0_default.copy(),
        name=f"smoothed[{obj.name}]",
        base=obj,
        smoothing_radius=float(p),
        params={"p": float(p), "mc_samples": mc_samples, "seed": seed},
    )


def smoothed_value_mc(obj: Objective, x, p: float, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Fresh Monte-Carlo estimate of ``F_hat(x)`` and its standard error."""
    us = unit_ball_batch(obj.d, n, rng)
    vals = np.array([obj.value_fn(np.asarray(x) + p * u) for u in us])
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


def central_difference_grad(value_fn: Callable[[Vector], float], x, h: float = 1e-6) -> Vector:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (value_fn(x + e) - value_fn(x - e)) / (2 * h)
    return out


# -- catalogue -------------------------------------------------------------------


def _center(params: Mapping, d: int) -> Vector:
    c = np.asarray(params.get("c", 0.0), dtype=float)
    if c.ndim == 0:
        return np.full(d, float(c))
    if c.shape != (d,):
        raise ValueError(f"center has shape {c.shape}, expected ({d},)")
    return c


def _x0(params: Mapping, d: int, default: Vector) -> Vector:
    if "x0" not in params:
        return default
    x0 = np.asarray(params["x0"], dtype=float)
    return np.full(d, float(x0)) if x0.ndim == 0 else x0


def _quadratic(params, d):
    h = float(params.get("h", 1.0))
    c = _center(params, d)
    return Objective(
        d=d,
        value_fn=lambda x: 0.5 * h * float(np.dot(x - c, x - c)),
        grad_fn=lambda x: h * (x - c),
        H=abs(h),
        J=0.0,
        F_star=0.0 if h >= 0 else None,
        x0_default=_x0(params, d, c + 1.0),
        name="quadratic",
    )


def _cosine_mixture(params, d):
    a = float(params.get("a", 1.0))
    w = float(params.get("omega", 1.0))
    if a <= 0 or w <= 0:
        raise ValueError("cosine_mixture needs a > 0 and omega > 0")
    return Objective(
        d=d,
        value_fn=lambda x: a * float(np.sum(np.cos(w * x))),
        grad_fn=lambda x: -a * w * np.sin(w * x),
        G=a * w * math.sqrt(d),
        H=a * w**2,
        J=a * w**3,
        F_star=-a * d,
        x0_default=_x0(params, d, np.full(d, 0.5 / w)),
        name="cosine_mixture",
    )


def _sharp_valley(params, d):
    g = float(params.get("g", 1.0))
    if g <= 0:
        raise ValueError("sharp_valley needs g > 0")
    c = _center(params, d)

    def directional(x, v):
        s = np.sign(x - c)
        return g * np.where(s != 0, s, np.sign(v))

    return Objective(
        d=d,
        value_fn=lambda x: g * float(np.sum(np.abs(x - c))),
        grad_fn=lambda x: g * np.sign(x - c),
        G=g * math.sqrt(d),
        F_star=0.0,
        x0_default=_x0(params, d, c + 1.0),
        name="sharp_valley",
        directional_fn=directional,
    )


def _max_affine(params, d):
    if "A" in params:
        A = np.asarray(params["A"], dtype=float)
    else:
        m = int(params.get("m", 4))
        A = derive_rng(int(params.get("seed", 0)), "max_affine").standard_normal((m, d))
    if A.ndim != 2 or A.shape[1] != d:
        raise ValueError(f"A must have shape (m, {d})")
    b = np.asarray(params.get("b", np.zeros(A.shape[0])), dtype=float)
    if b.shape != (A.shape[0],):
        raise ValueError("b must have one entry per affine piece")

    def grad(x):
        return A[int(np.argmax(A @ x + b))].copy()

    def directional(x, v):
        vals = A @ x + b
        top = vals.max()
        active = np.flatnonzero(vals >= top - 1e-12 * (1.0 + abs(top)))
        slopes = A[active] @ v
        return A[active[int(np.argmax(slopes))]].copy()

    return Objective(
        d=d,
        value_fn=lambda x: float(np.max(A @ x + b)),
        grad_fn=grad,
        G=float(np.max(np.linalg.norm(A, axis=1))),
        x0_default=_x0(params, d, np.zeros(d)),
        name="max_affine",
        directional_fn=directional,
        params={"A": A, "b": b},
    )


_BUILDERS = {
    "quadratic": _quadratic,
    "cosine_mixture": _cosine_mixture,
    "sharp_valley": _sharp_valley,
    "max_affine": _max_affine,
}


def make_test_function(name: str, params: Mapping | None = None, **kwargs) -> Objective:
    """Build a catalogue objective.

    ``params`` must contain the dimension ``d``; remaining keys are the scale
    constants of the chosen function (``h``/``c``, ``a``/``omega``, ``g``/``c``,
    ``A``/``b`` or ``m``/``seed``) and an optional starting point ``x0``.
    """
    params = {**(params or {}), **kwargs}
    if name not in _BUILDERS:
        raise ValueError(f"unknown catalogue function {name!r}; choose from {CATALOGUE}")
    if "d" not in params:
        raise ValueError(f"{name} requires the dimension parameter 'd'")
    d = int(params["d"])
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    obj = _BUILDERS[name](params, d)
    obj.params = {**{k: v for k, v in params.items()}, **obj.params}
    return obj
