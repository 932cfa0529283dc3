"""Certified upper bounds on (delta, eps)-stationarity.

The stationarity measure at ``x`` is an infimum over all finite sets inside
the delta-ball whose mean is ``x``. That infimum is not computed here. Every
function in this module evaluates an explicit *witness* set, which yields an
upper bound on the measure; this is exactly what the epoch construction of
the conversion produces (the query points of an epoch, centred at their
average).

The mean condition is the slightly stricter unbiased variant: the witness
centre must equal the set average, not merely lie in its hull.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from o2nc.seeding import derive_rng

MEAN_TOL = 1e-10


@dataclass(frozen=True)
class WitnessSet:
    center: np.ndarray
    points: np.ndarray  # (m, d)
    norm_kind: str = "l2"  # "l2" or "l1" (l1 value, linf radius)

    def __post_init__(self):
        if self.norm_kind not in ("l2", "l1"):
            raise ValueError(f"unknown norm kind {self.norm_kind!r}")

    @classmethod
    def centered(cls, points, norm_kind: str = "l2") -> "WitnessSet":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(center=pts.mean(axis=0), points=pts, norm_kind=norm_kind)

    @property
    def radius(self) -> float:
        dev = self.points - self.center
        if self.norm_kind == "l1":
            return float(np.max(np.abs(dev)))
        return float(np.max(np.linalg.norm(dev, axis=1)))


def _validate(witness: WitnessSet) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(witness.points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("witness set is empty")
    err = float(np.max(np.abs(pts.mean(axis=0) - witness.center)))
    if err > MEAN_TOL:
        raise ValueError(f"witness mean differs from the centre by {err:.3g} > {MEAN_TOL}")
    return pts


def witness_stationarity(grad_fn: Callable, witness: WitnessSet) -> tuple[float, float]:
    """``(|mean of grad over S|, radius)``; l1 kind uses the 1-norm value and
    the infinity-norm radius."""
    pts = _validate(witness)
    mean_grad = np.mean([np.asarray(grad_fn(y), dtype=float) for y in pts], axis=0)
    ord_ = 1 if witness.norm_kind == "l1" else 2
    return float(np.linalg.norm(mean_grad, ord=ord_)), witness.radius


def epoch_witness(record, k: int, norm_kind: str = "l2") -> WitnessSet:
    return WitnessSet.centered(record.epoch_points(k), norm_kind)


def epoch_grad_average(grad_fn: Callable, record, k: int, norm_kind: str = "l2") -> float:
    """``|(1/T) sum_t grad F(w^k_t)|`` for epoch ``k`` (1-based)."""
    if not 1 <= k <= record.K:
        raise IndexError(f"epoch {k} outside 1..{record.K}")
    value, _ = witness_stationarity(grad_fn, epoch_witness(record, k, norm_kind))
    return value


def estimate_epoch_grad_average(oracle, record, k: int, m: int = 64, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo version for objectives reachable only through an oracle.

    Each ``grad F(w^k_t)`` is replaced by an average of ``m`` oracle calls.
    Returns the norm of the estimated mean gradient and a standard error
    for that mean (root of the summed per-coordinate variances).
    """
    pts = record.epoch_points(k)
    rng = derive_rng(seed, "epoch_grad_mc", k)
    samples = np.stack([oracle.batch(w, m, rng) for w in pts])  # (T, m, d)
    per_draw = samples.mean(axis=0)  # averaging over t, one row per draw
    mean = per_draw.mean(axis=0)
    se = math.sqrt(float(np.sum(per_draw.var(axis=0, ddof=1))) / m)
    return float(np.linalg.norm(mean)), se


def smooth_bound(eps: float, H: float, delta: float) -> float:
    """Gradient-norm bound ``eps + H delta`` for an H-smooth function."""
    if min(eps, H, delta) < 0:
        raise ValueError("inputs must be non-negative")
    return eps + H * delta


def second_order_bound(eps: float, J: float, delta: float) -> float:
    """Gradient-norm bound ``eps + J delta^2 / 2`` under J-Lipschitz Hessians."""
    if min(eps, J, delta) < 0:
        raise ValueError("inputs must be non-negative")
    return eps + 0.5 * J * delta**2


def smoothed_stationarity_factor(eps_hat: float) -> float:
    """Bound transferred from the smoothed objective (radius ``p = eps/G``) to the original."""
    return 2.0 * eps_hat


def random_witness(center, radius: float, m: int, rng: np.random.Generator, norm_kind: str = "l2") -> WitnessSet:
    """Symmetric random witness: ``m`` (even) points ``center +/- r_j u_j`` inside the ball."""
    center = np.asarray(center, dtype=float)
    d = center.size
    half = max(1, m // 2)
    if norm_kind == "l1":
        offs = rng.uniform(-radius, radius, size=(half, d))
    else:
        z = rng.standard_normal((half, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        offs = z * (radius * rng.random(half) ** (1.0 / d))[:, None]
    pts = np.concatenate([center + offs, center - offs])
    return WitnessSet(center=center, points=pts, norm_kind=norm_kind)
