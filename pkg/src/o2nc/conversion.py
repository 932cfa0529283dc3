"""Online-to-non-convex conversion driver and its parameter schedules.

Each round the learner commits to an offset ``delta_n``, the iterate moves
``x_n = x_{n-1} + delta_n``, the oracle is queried at
``w_n = x_{n-1} + s_n delta_n`` and the result is fed back to the learner as
a linear loss. Only ``M = K T`` rounds run; the remainder ``N - M`` of the
budget is deliberately left unspent so that every epoch is a full window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from o2nc.objective import Objective
from o2nc.seeding import derive_rng

Vector = np.ndarray


@dataclass(frozen=True)
class RunConfig:
    N: int
    T: int
    D: float
    s_mode: str = "uniform"
    seed: int = 0
    oracle_kind: str = "stochastic"

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("epoch length T must be at least 1")
        if self.N < self.T:
            raise ValueError(f"budget N={self.N} is smaller than the epoch length T={self.T}")
        if self.s_mode not in ("uniform", "midpoint"):
            raise ValueError(f"unknown s_mode {self.s_mode!r}")
        if self.oracle_kind not in ("stochastic", "deterministic", "directional", "smoothed", "hard"):
            raise ValueError(f"unknown oracle kind {self.oracle_kind!r}")

    @property
    def K(self) -> int:
        return self.N // self.T

    @property
    def M(self) -> int:
        return self.K * self.T


@dataclass
class RunRecord:
    T: int
    K: int
    D: float
    xs: np.ndarray  # (M + 1, d): x_0 .. x_M
    ws: np.ndarray  # (M, d)
    gs: np.ndarray  # (M, d)
    deltas: np.ndarray  # (M, d)
    ss: np.ndarray  # (M,)
    fvals: Optional[np.ndarray] = None  # (M + 1,)
    per_epoch_grad_avg_norm: Optional[np.ndarray] = None
    oracle_calls: int = 0
    learner_grad_evals: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.K * self.T

    @property
    def epoch_averages(self) -> np.ndarray:
        return self.ws.reshape(self.K, self.T, -1).mean(axis=1)

    def epoch_points(self, k: int) -> np.ndarray:
        """Query points ``w^k_1 .. w^k_T`` of epoch ``k`` (1-based)."""
        if not 1 <= k <= self.K:
            raise IndexError(f"epoch {k} outside 1..{self.K}")
        return self.ws[(k - 1) * self.T : k * self.T]

    @property
    def grad_evals(self) -> int:
        return self.oracle_calls + self.learner_grad_evals

    def locality(self, norm: str = "l2") -> float:
        """``max_{k,t} |wbar^k - w^k_t|`` in the l2 or linf norm."""
        dev = self.ws.reshape(self.K, self.T, -1) - self.epoch_averages[:, None, :]
        if norm == "linf":
            return float(np.max(np.abs(dev)))
        return float(np.max(np.linalg.norm(dev, axis=2)))


def run_o2nc(oracle, learner, config: RunConfig, x0, objective: Objective | None = None,
             track_values: bool = True) -> RunRecord:
    """Run ``M = K T`` rounds of the conversion.

    ``oracle(w, rng, v)`` returns the observed gradient; in directional mode the
    offset ``delta_n`` is passed as ``v``. ``objective`` (defaults to the
    oracle's) supplies exact values and gradients for diagnostics only.
    """
    if abs(getattr(learner, "D", config.D) - config.D) > 1e-12 * max(1.0, config.D):
        raise ValueError(f"learner radius {learner.D} does not match configured D={config.D}")
    if getattr(learner, "needs_anchor", False) and config.s_mode != "midpoint":
        raise ValueError("careful-hints learners require the midpoint query s = 1/2")
    objective = objective if objective is not None else getattr(oracle, "objective", None)
    x = np.array(x0, dtype=float)
    d = x.size
    T, K = config.T, config.K
    M = K * T
    rng_s = derive_rng(config.seed, "s")
    rng_z = derive_rng(config.seed, "oracle")
    directional = config.oracle_kind == "directional"

    xs = np.empty((M + 1, d))
    ws = np.empty((M, d))
    gs = np.empty((M, d))
    deltas = np.empty((M, d))
    ss = np.empty(M)
    xs[0] = x
    calls0 = getattr(oracle, "calls", 0)
    evals0 = getattr(learner, "grad_evals", 0)
    for n in range(M):
        delta = learner.propose(x)
        s = 0.5 if config.s_mode == "midpoint" else float(rng_s.random())
        w = x + s * delta
        g = oracle(w, rng_z, delta if directional else None)
        learner.update(g)
        x = x + delta
        xs[n + 1] = x
        ws[n] = w
        gs[n] = g
        deltas[n] = delta
        ss[n] = s

    rec = RunRecord(T=T, K=K, D=config.D, xs=xs, ws=ws, gs=gs, deltas=deltas, ss=ss)
    rec.oracle_calls = getattr(oracle, "calls", M) - calls0 if hasattr(oracle, "calls") else M
    rec.learner_grad_evals = getattr(learner, "grad_evals", 0) - evals0
    if objective is not None:
        if track_values:
            rec.fvals = np.array([objective.value(xi) for xi in xs])
        if objective.has_grad:
            grads = np.array([objective.grad(wi) for wi in ws])
            rec.per_epoch_grad_avg_norm = np.linalg.norm(grads.reshape(K, T, d).mean(axis=1), axis=1)
    rec.meta = {"N": config.N, "s_mode": config.s_mode, "seed": config.seed, "oracle_kind": config.oracle_kind}
    return rec


def select_output(record: RunRecord, seed: int) -> Vector:
    """Epoch average chosen uniformly at random."""
    if record.K < 1:
        raise ValueError("record has no epochs")
    k = int(derive_rng(seed, "select").integers(record.K))
    return record.epoch_averages[k].copy()


# -- schedules ---------------------------------------------------------------------


class Schedule(NamedTuple):
    D: float
    T: int
    K: int


class SecondOrderSchedule(NamedTuple):
    D: float
    T: int
    K: int
    eta: float
    Q: int
    grad_evals_per_round: int


def _ceil(x: float) -> int:
    # Formulas such as 32**(2/5) land a few ulps above an integer.
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


def _positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ValueError(f"{k} must be positive, got {v}")


def _finish(T_raw: float, N: int, delta: float) -> Schedule:
    cap = N // 2
    if cap < 1:
        raise ValueError(f"budget N={N} too small for an epoch")
    T = max(1, min(_ceil(T_raw), cap))
    return Schedule(D=delta / T, T=T, K=N // T)


def schedule_nonsmooth(G: float, gap: float, N: int, delta: float) -> Schedule:
    """``T = min(ceil((G N delta / gap)^{2/3}), N/2)``, ``D = delta / T``."""
    _positive(G=G, gap=gap, N=N, delta=delta)
    return _finish((G * N * delta / gap) ** (2.0 / 3.0), N, delta)


def schedule_det_smooth(C: float, H: float, gap: float, N: int, delta: float) -> Schedule:
    """``T = min(ceil((C delta^2 sqrt(H) N)^{2/5} / gap^{2/5}), N/2)``."""
    _positive(C=C, H=H, gap=gap, N=N, delta=delta)
    return _finish((C * delta**2 * math.sqrt(H) * N) ** 0.4 / gap**0.4, N, delta)


def schedule_second_order(H: float, J: float, gap: float, N: int, delta: float, G: float) -> SecondOrderSchedule:
    """Midpoint/careful-hints schedule.

    ``T = min(ceil((delta^2 (H + J delta) N)^{1/3} / gap^{1/3}), N/2)``,
    ``eta = 1/(2H)``, ``D = delta/T``, ``Q = ceil(log2(sqrt(N G / (H D))))``.
    Each round costs ``Q + 1`` hint gradients plus the loss gradient.
    """
    _positive(H=H, gap=gap, N=N, delta=delta, G=G)
    if J < 0:
        raise ValueError("J must be non-negative")
    base = _finish((delta**2 * (H + J * delta) * N) ** (1.0 / 3.0) / gap ** (1.0 / 3.0), N, delta)
    Q = max(0, _ceil(math.log2(math.sqrt(N * G / (H * base.D)))))
    return SecondOrderSchedule(D=base.D, T=base.T, K=base.K, eta=1.0 / (2.0 * H), Q=Q, grad_evals_per_round=Q + 2)


def recommended_delta_second_order(H: float, J: float, gap: float, N: int) -> float:
    """``delta = H^{1/7} gap^{2/7} / (J^{3/7} N^{2/7})``."""
    if J == 0:
        raise ValueError("recommended delta is undefined for J = 0; pass delta explicitly")
    _positive(H=H, J=J, gap=gap, N=N)
    return H ** (1 / 7) * gap ** (2 / 7) / (J ** (3 / 7) * N ** (2 / 7))
