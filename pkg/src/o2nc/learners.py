"""Online linear learners that emit the offsets of the conversion.

The step functions (``ogd_step``, ``percoord_ogd_step``, ``omd_step`` /
``omd_update``, ``careful_hints``) are pure: they take a :class:`LearnerState`
and return a new one. The learner classes wrap them in the two-phase round
protocol used by the conversion driver::

    delta = learner.propose(x_prev)   # phase 1: commit to an offset
    learner.update(g)                 # phase 2: observe the linear loss

Calling the phases out of order raises :class:`ProtocolError`; the regret
accounting relies on the offset being fixed before its gradient is revealed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from o2nc.objective import Objective

Vector = np.ndarray


class ProtocolError(RuntimeError):
    """A learner was driven out of its propose/update order."""


# -- projections -------------------------------------------------------------------


def project_l2_ball(x, D: float) -> Vector:
    """``x * min(D / |x|, 1)``."""
    if D < 0:
        raise ValueError("radius must be non-negative")
    x = np.asarray(x, dtype=float)
    n = float(np.linalg.norm(x))
    if n <= D:
        return x.copy()
    return x * (D / n)


def project_linf_ball(x, D: float) -> Vector:
    if D < 0:
        raise ValueError("radius must be non-negative")
    return np.clip(np.asarray(x, dtype=float), -D, D)


# -- state and pure steps ----------------------------------------------------------


@dataclass(frozen=True)
class LearnerState:
    kind: str
    D: float
    eta: float | Vector
    delta: Vector
    shadow: Optional[Vector] = None
    last_hint: Optional[Vector] = None
    round: int = 0
    pending: bool = False


def fresh_state(kind: str, d: int, D: float, eta) -> LearnerState:
    if kind not in ("ogd", "percoord", "omd", "careful_hints"):
        raise ValueError(f"unknown learner kind {kind!r}")
    if D < 0:
        raise ValueError("radius must be non-negative")
    if kind == "percoord":
        eta = np.broadcast_to(np.asarray(eta, dtype=float), (d,)).copy()
    optimistic = kind in ("omd", "careful_hints")
    return LearnerState(
        kind=kind,
        D=float(D),
        eta=eta,
        delta=np.zeros(d),
        shadow=np.zeros(d) if optimistic else None,
    )


def _check_dim(state: LearnerState, g: Vector) -> Vector:
    g = np.asarray(g, dtype=float)
    if g.shape != state.delta.shape:
        raise ValueError(f"gradient has shape {g.shape}, learner works in {state.delta.shape}")
    return g


def ogd_step(state: LearnerState, g) -> tuple[LearnerState, Vector]:
    """Projected online gradient descent: ``Pi_{|D| <= D}[delta - eta g]``."""
    g = _check_dim(state, g)
    nxt = project_l2_ball(state.delta - state.eta * g, state.D)
    return replace(state, delta=nxt, round=state.round + 1), nxt


def percoord_ogd_step(state: LearnerState, g) -> tuple[LearnerState, Vector]:
    """One OGD instance per coordinate, each clamped to ``[-D, D]``."""
    g = _check_dim(state, g)
    eta = np.asarray(state.eta, dtype=float)
    if eta.shape != g.shape:
        raise ValueError("per-coordinate step sizes do not match the gradient dimension")
    nxt = project_linf_ball(state.delta - eta * g, state.D)
    return replace(state, delta=nxt, round=state.round + 1), nxt


def omd_step(state: LearnerState, hint) -> tuple[LearnerState, Vector]:
    """Optimistic play ``Pi[shadow - eta h]``; must be followed by :func:`omd_update`."""
    if state.shadow is None:
        raise ValueError("omd_step needs an optimistic learner state")
    if state.pending:
        raise ProtocolError("omd_step called twice in one round")
    hint = _check_dim(state, hint)
    delta = project_l2_ball(state.shadow - state.eta * hint, state.D)
    return replace(state, delta=delta, last_hint=hint, pending=True), delta


def omd_update(state: LearnerState, g) -> LearnerState:
    """Shadow update ``shadow <- Pi[shadow - eta g]`` closing the round."""
    if not state.pending:
        raise ProtocolError("omd_update called without a preceding omd_step")
    g = _check_dim(state, g)
    shadow = project_l2_ball(state.shadow - state.eta * g, state.D)
    return replace(state, shadow=shadow, pending=False, round=state.round + 1)


@dataclass
class HintTrace:
    hints: list
    grad_evals: int

    @property
    def diffs(self) -> list[float]:
        return [float(np.linalg.norm(b - a)) for a, b in zip(self.hints, self.hints[1:])]

    @property
    def final_gap(self) -> float:
        """``|h^Q - h^{Q-1}|``, or 0 when no inner iteration ran."""
        d = self.diffs
        return d[-1] if d else 0.0


def careful_hints(
    obj: Objective,
    x_prev,
    shadow,
    eta: float,
    D: float,
    Q: int,
    trace: bool = False,
):
    """Fixed-point hint iteration for the midpoint query.

    ``h^0 = grad F(x_prev)`` and ``h^i = grad F(x_prev + Pi[shadow - eta h^{i-1}] / 2)``;
    exactly ``Q + 1`` gradient evaluations are made (no early exit). Under
    ``H``-smoothness with ``eta <= 1/H`` successive differences at least halve.
    """
    if obj.H is None:
        raise ValueError("careful hints need a smoothness constant H")
    if obj.H > 0 and eta > 1.0 / obj.H:
        raise ValueError(f"eta={eta} exceeds 1/H={1.0 / obj.H}; contraction not guaranteed")
    if Q < 0:
        raise ValueError("Q must be non-negative")
    x_prev = np.asarray(x_prev, dtype=float)
    shadow = np.asarray(shadow, dtype=float)
    h = obj.grad(x_prev)
    hs = [h]
    for _ in range(Q):
        h = obj.grad(x_prev + 0.5 * project_l2_ball(shadow - eta * h, D))
        hs.append(h)
    if trace:
        return h, HintTrace(hints=hs, grad_evals=Q + 1)
    return h


# -- stateful learners -------------------------------------------------------------


class OnlineLearner:
    """Common two-phase protocol. Subclasses fill :meth:`_propose` / :meth:`_update`."""

    kind = ""
    norm = "l2"
    needs_anchor = False

    def __init__(self, d: int, D: float, eta):
        self.d = int(d)
        self.D = float(D)
        self.eta0 = eta
        self.state = fresh_state(self.kind, self.d, self.D, eta)
        self._awaiting = False
        self.grad_evals = 0

    def propose(self, x_prev=None) -> Vector:
        if self._awaiting:
            raise ProtocolError("propose called twice without an update")
        delta = self._propose(x_prev).copy()
        self._awaiting = True
        return delta

    def update(self, g) -> None:
        if not self._awaiting:
            raise ProtocolError("update called before propose")
        self._update(np.asarray(g, dtype=float))
        self._awaiting = False

    def reset(self) -> None:
        if self._awaiting:
            raise ProtocolError("reset in the middle of a round")
        self.state = fresh_state(self.kind, self.d, self.D, self.eta0)

    def _propose(self, x_prev) -> Vector:
        return self.state.delta

    def _update(self, g: Vector) -> None:
        raise NotImplementedError


class OGD(OnlineLearner):
    kind = "ogd"

    def _update(self, g):
        self.state, _ = ogd_step(self.state, g)


class PerCoordinateOGD(OnlineLearner):
    kind = "percoord"
    norm = "linf"

    def _update(self, g):
        self.state, _ = percoord_ogd_step(self.state, g)


class OptimisticOMD(OnlineLearner):
    """Optimistic mirror descent whose hint is the previous gradient.

    ``hint_fn`` may supply arbitrary hints instead (called with the round
    index). The previous-gradient hint survives :meth:`reset`, matching the
    cross-epoch hint used in the deterministic smooth analysis.
    """

    kind = "omd"

    def __init__(self, d, D, eta, hint_fn: Callable[[int], Vector] | None = None):
        super().__init__(d, D, eta)
        self.hint_fn = hint_fn
        self.prev_grad = np.zeros(self.d)
        self.t = 0

    def _propose(self, x_prev):
        hint = self.hint_fn(self.t) if self.hint_fn is not None else self.prev_grad
        self.state, delta = omd_step(self.state, hint)
        return delta

    def _update(self, g):
        self.state = omd_update(self.state, g)
        self.prev_grad = g.copy()
        self.t += 1


class CarefulHintsOMD(OnlineLearner):
    """Optimistic mirror descent fed by :func:`careful_hints`.

    Needs the previous iterate (``propose(x_prev)``) and exact gradient access
    to ``objective``; the conversion must query at the midpoint ``s = 1/2``.
    """

    kind = "careful_hints"
    needs_anchor = True

    def __init__(self, objective: Objective, D: float, eta: float | None = None, Q: int = 0):
        if objective.H is None:
            raise ValueError("careful hints need a smoothness constant H")
        if eta is None:
            eta = 1.0 / (2.0 * objective.H)
        super().__init__(objective.d, D, eta)
        self.objective = objective
        self.Q = int(Q)
        self.last_trace: HintTrace | None = None

    def _propose(self, x_prev):
        if x_prev is None:
            raise ProtocolError("careful hints need the previous iterate")
        h, tr = careful_hints(self.objective, x_prev, self.state.shadow, self.state.eta, self.D, self.Q, trace=True)
        self.grad_evals += tr.grad_evals
        self.last_trace = tr
        self.state, delta = omd_step(self.state, h)
        return delta

    def _update(self, g):
        self.state = omd_update(self.state, g)


class ResetWrapper:
    """Restart ``inner`` from a fresh state every ``T`` rounds (K-shifting regret)."""

    def __init__(self, inner: OnlineLearner, T: int):
        if T < 1:
            raise ValueError("epoch length must be at least 1")
        self.inner = inner
        self.T = int(T)
        self.rounds = 0

    def __getattr__(self, name):
        if name == "inner":
            raise AttributeError(name)
        return getattr(self.inner, name)

    def propose(self, x_prev=None):
        if self.rounds > 0 and self.rounds % self.T == 0 and not self.inner._awaiting:
            self.inner.reset()
        return self.inner.propose(x_prev)

    def update(self, g):
        self.inner.update(g)
        self.rounds += 1


def reset_wrapper(inner: OnlineLearner, T: int) -> ResetWrapper:
    return ResetWrapper(inner, T)


def make_learner(kind: str, d: int, D: float, eta=None, objective: Objective | None = None,
                 Q: int = 0, G: float | None = None, T: int | None = None):
    """Learner by name with the default step sizes.

    OGD uses ``D / (G sqrt(T))``; per-coordinate OGD uses ``D / (G_i sqrt(T))``
    where ``G`` may be a per-coordinate vector; careful hints use ``1 / (2H)``;
    optimistic OMD with previous-gradient hints uses ``1 / (2 H sqrt(T))`` when
    ``H`` is known.
    """
    if kind == "careful_hints":
        if objective is None:
            raise ValueError("careful_hints needs the objective")
        return CarefulHintsOMD(objective, D, eta, Q)
    if eta is None:
        if T is None:
            raise ValueError("default step size needs the epoch length T")
        if kind == "omd" and objective is not None and objective.H:
            eta = 1.0 / (2.0 * objective.H * math.sqrt(T))
        else:
            if G is None:
                raise ValueError("default step size needs G")
            G_arr = np.asarray(G, dtype=float)
            eta = D / (G_arr * math.sqrt(T)) if kind == "percoord" else D / (float(np.linalg.norm(G_arr)) * math.sqrt(T))
    if kind == "ogd":
        return OGD(d, D, eta)
    if kind == "percoord":
        return PerCoordinateOGD(d, D, eta)
    if kind == "omd":
        return OptimisticOMD(d, D, eta)
    raise ValueError(f"unknown learner kind {kind!r}")


# -- regret accounting -------------------------------------------------------------


@dataclass(frozen=True)
class ComparatorSequence:
    us: np.ndarray  # shape (K, d)
    T: int

    @property
    def K(self) -> int:
        return int(self.us.shape[0])


def build_comparators(grad_windows: Sequence, D: float, norm: str = "l2") -> ComparatorSequence:
    """Worst-case comparator per window: ``-D s/|s|`` (l2) or ``-D sign(s)`` (l1),
    with ``s`` the window's gradient sum; a zero sum gives a zero comparator."""
    us = []
    T = None
    for window in grad_windows:
        window = np.atleast_2d(np.asarray(window, dtype=float))
        if window.shape[0] == 0:
            raise ValueError("comparator windows must be non-empty")
        T = window.shape[0] if T is None else T
        s = window.sum(axis=0)
        if norm == "l2":
            n = float(np.linalg.norm(s))
            us.append(np.zeros_like(s) if n == 0.0 else -D * s / n)
        elif norm in ("l1", "linf"):
            us.append(-D * np.sign(s))
        else:
            raise ValueError(f"unknown comparator norm {norm!r}")
    return ComparatorSequence(us=np.array(us), T=int(T or 0))


def realized_regret(gs, deltas, comparators: ComparatorSequence) -> float:
    """``sum_k sum_{n in epoch k} <g_n, delta_n - u^k>``."""
    gs = np.atleast_2d(np.asarray(gs, dtype=float))
    deltas = np.atleast_2d(np.asarray(deltas, dtype=float))
    K, T = comparators.K, comparators.T
    if gs.shape != deltas.shape or gs.shape[0] != K * T:
        raise ValueError(f"need {K}*{T} gradients and offsets, got {gs.shape[0]} and {deltas.shape[0]}")
    us = np.repeat(comparators.us, T, axis=0)
    return float(np.sum(gs * (deltas - us)))


def ogd_regret_bound(D: float, eta: float, gs) -> float:
    """``D^2 / (2 eta) + (eta / 2) sum |g_t|^2``."""
    gs = np.atleast_2d(np.asarray(gs, dtype=float))
    return D**2 / (2 * eta) + 0.5 * eta * float(np.sum(gs**2))


def percoord_regret_bound(D: float, eta, gs) -> float:
    gs = np.atleast_2d(np.asarray(gs, dtype=float))
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (gs.shape[1],))
    return float(np.sum(D**2 / (2 * eta) + 0.5 * eta * np.sum(gs**2, axis=0)))


def omd_regret_bound(D: float, eta: float, gs, hs) -> float:
    """``D^2 / (2 eta) + (eta / 2) sum |g_t - h_t|^2``."""
    gs = np.atleast_2d(np.asarray(gs, dtype=float))
    hs = np.atleast_2d(np.asarray(hs, dtype=float))
    return D**2 / (2 * eta) + 0.5 * eta * float(np.sum((gs - hs) ** 2))
