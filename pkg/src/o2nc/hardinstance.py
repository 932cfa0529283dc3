"""Zero-chain hard instance for stochastic smooth optimization.

Building blocks:

* ``prog_c(x)``: index of the last coordinate with ``|x_i| >= c`` (strict at
  ``c = 0``), counted from 1;
* the two-bump chain ``F_T``, where coordinate ``i`` only becomes reachable
  once coordinate ``i - 1`` is large;
* the zero-chain oracle, which reveals the next coordinate only with
  probability ``p``;
* the shrinking map ``rho_R`` and the Lipschitz quadratic ``q_B``;
* the rotated composite ``F_hat(x) = F_T(U^T rho_R(x)) + eta q_B(x)`` and its
  rescaled version ``F_lam(x) = (H lam^2 / 156) F_hat(x / lam)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from o2nc.objective import Objective
from o2nc.seeding import derive_rng

G0 = 23.0
H0 = 152.0
GAMMA0 = 12.0
ETA_W = 0.1
SMOOTH_CONST = 156.0
PROG_THRESHOLD = 0.25

_SQRT_E = math.sqrt(math.e)
_PHI_SCALE = math.sqrt(2.0 * math.pi * math.e)
# Below this argument exp(1 - 1/t^2) underflows to 0 anyway.
_PSI_CUTOFF = 0.03


def prog(x, c: float) -> int:
    if c < 0:
        raise ValueError("threshold must be non-negative")
    a = np.abs(np.asarray(x, dtype=float).ravel())
    hits = np.flatnonzero(a > 0) if c == 0 else np.flatnonzero(a >= c)
    return int(hits[-1]) + 1 if hits.size else 0


# -- chain -------------------------------------------------------------------------


def psi(x):
    x = np.asarray(x, dtype=float)
    t = 2.0 * x - 1.0
    out = np.zeros_like(t)
    m = t > _PSI_CUTOFF
    out[m] = np.exp(1.0 - 1.0 / t[m] ** 2)
    return out


def psi_prime(x):
    x = np.asarray(x, dtype=float)
    t = 2.0 * x - 1.0
    out = np.zeros_like(t)
    m = t > _PSI_CUTOFF
    out[m] = np.exp(1.0 - 1.0 / t[m] ** 2) * 4.0 / t[m] ** 3
    return out


def phi(x):
    return _PHI_SCALE * ndtr(np.asarray(x, dtype=float))


def phi_prime(x):
    x = np.asarray(x, dtype=float)
    return _SQRT_E * np.exp(-0.5 * x**2)


@dataclass(frozen=True)
class ChainFunction:
    """``F_T(x) = sum_i [Psi(-x_{i-1}) Phi(-x_i) - Psi(x_{i-1}) Phi(x_i)] + Psi(1) Phi(0)``
    with the convention ``x_0 = 1``; the constant makes ``F_T(0) = 0``."""

    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("chain length must be at least 1")

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.T:
            raise ValueError(f"expected {self.T} coordinates, got {x.shape[-1]}")
        return x

    def value(self, x) -> float:
        x = self._check(x)
        prev = np.concatenate([[1.0], x[:-1]])
        terms = psi(-prev) * phi(-x) - psi(prev) * phi(x)
        return float(np.sum(terms) + phi(0.0))

    def grad(self, x) -> np.ndarray:
        x = self._check(x)
        prev = np.concatenate([[1.0], x[:-1]])
        g = -psi(-prev) * phi_prime(-x) - psi(prev) * phi_prime(x)
        nxt = x[1:]
        g[:-1] -= psi_prime(-x[:-1]) * phi(-nxt) + psi_prime(x[:-1]) * phi(nxt)
        return g


def chain_build(T: int) -> ChainFunction:
    return ChainFunction(int(T))


def zero_chain_oracle(chain: ChainFunction, x, p: float, seed=None, z: int | None = None,
                      mode: str = "shifted") -> np.ndarray:
    """Unbiased chain gradient that hides progress with probability ``1 - p``.

    ``mode="shifted"`` scales every coordinate beyond ``prog_{1/4}(x)`` by
    ``z / p``; ``mode="literal"`` scales coordinate ``prog_{1/4}(x)`` itself.
    ``seed`` may be an int or a Generator; ``z`` overrides the Bernoulli draw.
    """
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if mode not in ("shifted", "literal"):
        raise ValueError(f"unknown zero-chain mode {mode!r}")
    if z is None:
        rng = seed if isinstance(seed, np.random.Generator) else derive_rng(int(seed or 0), "zero_chain")
        z = int(rng.random() < p)
    g = chain.grad(x)
    j = prog(x, PROG_THRESHOLD)
    factor = z / p
    if mode == "shifted":
        g[j:] *= factor
    elif j >= 1:
        g[j - 1] *= factor
    return g


# -- shrinking map and Lipschitz quadratic ------------------------------------------


def _shrink(x, R: float) -> float:
    if R <= 0:
        raise ValueError("radius must be positive")
    return math.sqrt(1.0 + float(np.dot(x, x)) / R**2)


def rho(x, R: float) -> np.ndarray:
    """``x / sqrt(1 + |x|^2 / R^2)``, a diffeomorphism onto the open R-ball."""
    x = np.asarray(x, dtype=float)
    return x / _shrink(x, R)


def rho_jacobian(x, R: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    s = _shrink(x, R)
    y = x / s
    return (np.eye(x.size) - np.outer(y, y) / R**2) / s


def rho_jacobian_apply(x, R: float, v) -> np.ndarray:
    """``J_rho(x) v`` without forming the matrix (the Jacobian is symmetric)."""
    x = np.asarray(x, dtype=float)
    s = _shrink(x, R)
    y = x / s
    return (v - y * (float(np.dot(y, v)) / R**2)) / s


def q_value(x, B: float) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.dot(x, x)) / _shrink(x, B)


def q_grad(x, B: float) -> np.ndarray:
    """``(2 - |rho(x)|^2 / B^2) rho(x)``."""
    y = rho(x, B)
    return (2.0 - float(np.dot(y, y)) / B**2) * y


def q_hess(x, B: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    s = _shrink(x, B)
    r = float(np.dot(x, x))
    diag = 2.0 / s - r / (B**2 * s**3)
    rank1 = -4.0 / (B**2 * s**3) + 3.0 * r / (B**4 * s**5)
    return diag * np.eye(x.size) + rank1 * np.outer(x, x)


# -- rotations ---------------------------------------------------------------------


def sample_orthonormal(d: int, T: int, seed: int = 0) -> np.ndarray:
    """Haar-distributed ``d x T`` matrix with orthonormal columns."""
    if d < T:
        raise ValueError(f"need d >= T, got d={d}, T={T}")
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = derive_rng(int(seed), "rotation")
    Q, Rm = np.linalg.qr(rng.standard_normal((d, T)))
    signs = np.sign(np.diag(Rm))
    signs[signs == 0] = 1.0
    return Q * signs


def rotation_dimension_bound(T: int, p: float, c: float = 0.1) -> int:
    """Dimension at which the random rotation hides the chain w.h.p."""
    R = 10.0 * G0 * math.sqrt(T)
    return int(math.ceil(18.0 * R**2 * T / p * math.log(2.0 * T**2 / (p * c))))


# -- composite instance ------------------------------------------------------------


@dataclass
class ZeroChainCheck:
    calls: int = 0
    violations: int = 0
    # next coordinate revealed with z = 1 / with z = 0 (the latter only in literal mode)
    reveals: int = 0
    unfired_reveals: int = 0
    max_query_prog: int = 0


@dataclass(frozen=True)
class HardInstance:
    """Rotated, shrunk chain plus the Lipschitz quadratic, optionally rescaled.

    ``value``, ``grad`` and ``oracle`` act on the scaled function
    ``F_lam(x) = value_scale F_hat(x / lam)``; with ``lam = 1`` and unit scales
    they are ``F_hat`` itself.
    """

    T: int
    d: int
    U: np.ndarray
    p: float
    R: float
    B: float
    eta_w: float = ETA_W
    lam: float = 1.0
    value_scale: float = 1.0
    mode: str = "shifted"
    seed: int = 0
    pin_threshold: float = 0.5
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, T: int, d: int | None = None, p: float = 1.0, seed: int = 0,
              mode: str = "shifted", c: float = 0.1) -> "HardInstance":
        if not 0 < p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {p}")
        d = default_dimension(T, p, c) if d is None else int(d)
        if d < T:
            raise ValueError(f"dimension {d} below chain length {T}")
        R = 10.0 * G0 * math.sqrt(T)
        U = sample_orthonormal(d, T, seed)
        return cls(T=int(T), d=d, U=U, p=float(p), R=R, B=R, mode=mode, seed=int(seed))

    @property
    def chain(self) -> ChainFunction:
        return ChainFunction(self.T)

    @property
    def grad_scale(self) -> float:
        return self.value_scale / self.lam

    # unscaled F_hat
    def chain_point(self, x) -> np.ndarray:
        """``U^T rho_R(x)`` for a point of the unscaled instance."""
        return self.U.T @ rho(x, self.R)

    def hat_value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return self.chain.value(self.chain_point(x)) + self.eta_w * q_value(x, self.B)

    def _lift(self, x, chain_grad) -> np.ndarray:
        return rho_jacobian_apply(x, self.R, self.U @ chain_grad) + self.eta_w * q_grad(x, self.B)

    def hat_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._lift(x, self.chain.grad(self.chain_point(x)))

    def hat_oracle(self, x, z: int) -> tuple[np.ndarray, np.ndarray]:
        """Oracle output and the underlying chain-space output."""
        x = np.asarray(x, dtype=float)
        chain_g = zero_chain_oracle(self.chain, self.chain_point(x), self.p, z=z, mode=self.mode)
        return self._lift(x, chain_g), chain_g

    # scaled F_lam
    def value(self, x) -> float:
        return self.value_scale * self.hat_value(np.asarray(x, dtype=float) / self.lam)

    def grad(self, x) -> np.ndarray:
        return self.grad_scale * self.hat_grad(np.asarray(x, dtype=float) / self.lam)

    def query_prog(self, x) -> int:
        """``prog_{1/4}`` of the chain coordinates seen by the oracle at ``x``."""
        return prog(self.chain_point(np.asarray(x, dtype=float) / self.lam), PROG_THRESHOLD)

    def pinned(self, x) -> bool:
        """True when the pinning bound applies at ``x`` (chain not finished)."""
        return self.query_prog(x) < self.T

    def objective(self) -> Objective:
        return Objective(
            d=self.d, value_fn=self.value, grad_fn=self.grad,
            G=self.meta.get("G", 92.0 * math.sqrt(self.T) * self.grad_scale),
            H=self.meta.get("H", SMOOTH_CONST * self.grad_scale / self.lam),
            F_star=None, name="hard_instance",
            params={"T": self.T, "p": self.p, "lam": self.lam, "seed": self.seed},
        )

    def oracle(self) -> "HardOracle":
        return HardOracle(self)

    def descriptor(self) -> dict:
        return {"T": self.T, "d": self.d, "p": self.p, "lam": self.lam,
                "value_scale": self.value_scale, "seed": self.seed, "mode": self.mode}


def default_dimension(T: int, p: float, c: float = 0.1, cap_factor: int = 10) -> int:
    bound = rotation_dimension_bound(T, p, c)
    cap = cap_factor * T
    if bound > cap:
        warnings.warn(
            f"rotation dimension bound {bound} capped at {cap}; the high-probability "
            "hiding argument is heuristic at this size",
            stacklevel=3,
        )
        return cap
    return bound


class HardOracle:
    """Stochastic oracle of a :class:`HardInstance` that checks the zero-chain
    property on every call and counts invocations."""

    kind = "hard"

    def __init__(self, instance: HardInstance):
        self.instance = instance
        self.objective = instance.objective()
        self.calls = 0
        self.check = ZeroChainCheck()

    def __call__(self, w, rng: np.random.Generator, v=None) -> np.ndarray:
        inst = self.instance
        self.calls += 1
        w = np.asarray(w, dtype=float)
        z = int(rng.random() < inst.p)
        g, chain_g = inst.hat_oracle(w / inst.lam, z)
        q_prog = prog(inst.chain_point(w / inst.lam), PROG_THRESHOLD)
        out_prog = prog(chain_g, 0.0)
        ck = self.check
        ck.calls += 1
        ck.max_query_prog = max(ck.max_query_prog, q_prog)
        if out_prog > q_prog + 1:
            ck.violations += 1
        if out_prog == q_prog + 1:
            if z == 1:
                ck.reveals += 1
            else:
                ck.unfired_reveals += 1
        return inst.grad_scale * g

    def batch(self, w, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.stack([self(w, rng) for _ in range(n)])


def make_hard_instance(gamma: float, H: float, eps: float, sigma: float, seed: int = 0,
                       d: int | None = None, mode: str = "shifted", c: float = 0.1) -> HardInstance:
    """Instance that is ``H``-smooth with gap ``<= gamma`` and oracle variance
    ``<= sigma^2`` on which ``|grad| >= eps`` stays pinned for many queries."""
    for name, v in (("gamma", gamma), ("H", H), ("eps", eps), ("sigma", sigma)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    ratio = H * gamma / (GAMMA0 * SMOOTH_CONST * 4.0 * eps**2)
    if ratio < 2:
        raise ValueError(f"H gamma / (12 * 156 * 4 eps^2) = {ratio:.4g} < 2")
    lam = SMOOTH_CONST / H * 2.0 * eps
    T = int(math.floor(ratio))
    p = min((2.0 * G0 * eps) ** 2 / sigma**2, 1.0)
    base = HardInstance.build(T, d, p, seed, mode, c)
    scale = H * lam**2 / SMOOTH_CONST
    meta = {
        "H": float(H),
        "G": 3.0 * math.sqrt(H * gamma),
        "gap_bound": float(gamma),
        "variance_bound": (H * lam / SMOOTH_CONST) ** 2 * G0**2 / p,
        "sigma": float(sigma),
        "eps": float(eps),
    }
    return HardInstance(T=base.T, d=base.d, U=base.U, p=p, R=base.R, B=base.B, lam=lam,
                        value_scale=scale, mode=mode, seed=int(seed), pin_threshold=float(eps), meta=meta)


def make_nonsmooth_hard_instance(delta: float, eps: float, gamma: float, G: float, seed: int = 0,
                                 d: int | None = None, mode: str = "shifted") -> HardInstance:
    """Hard instance for finding ``(delta, eps)``-stationary points of
    ``G``-Lipschitz functions: an ``eps/delta``-smooth instance at accuracy ``2 eps``."""
    for name, v in (("delta", delta), ("eps", eps), ("gamma", gamma)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    need = 3.0 * math.sqrt(2.0 * eps * gamma / delta)
    if not G >= need:
        raise ValueError(f"G={G} below the required 3 sqrt(2 eps gamma / delta) = {need:.4g}")
    H = eps / delta
    inst = make_hard_instance(gamma, H, 2.0 * eps, G, seed, d, mode)
    meta = dict(inst.meta, G=G / math.sqrt(2.0), delta=float(delta), smoothness=H)
    return HardInstance(T=inst.T, d=inst.d, U=inst.U, p=inst.p, R=inst.R, B=inst.B, lam=inst.lam,
                        value_scale=inst.value_scale, mode=mode, seed=int(seed),
                        pin_threshold=2.0 * eps, meta=meta)


# -- stress runs -------------------------------------------------------------------


@dataclass
class StressReport:
    queries: int
    zero_chain_violations: int
    pinned_iterates: int
    pin_violations: int
    min_pinned_grad: float
    max_query_prog: int
    reveals: int
    unfired_reveals: int


def stress_sgd(instance: HardInstance, n_queries: int, lr: float = 0.01, seed: int = 0,
               x0=None) -> StressReport:
    """Plain SGD against the oracle; every iterate is checked for pinning."""
    oracle = instance.oracle()
    rng = derive_rng(seed, "stress_sgd")
    x = np.zeros(instance.d) if x0 is None else np.array(x0, dtype=float)
    pinned = pin_bad = 0
    min_g = math.inf
    thr = instance.pin_threshold
    for _ in range(n_queries):
        if instance.pinned(x):
            pinned += 1
            gn = float(np.linalg.norm(instance.grad(x)))
            min_g = min(min_g, gn)
            pin_bad += gn < thr
        x = x - lr * oracle(x, rng)
    ck = oracle.check
    return StressReport(n_queries, ck.violations, pinned, pin_bad, min_g, ck.max_query_prog, ck.reveals, ck.unfired_reveals)
