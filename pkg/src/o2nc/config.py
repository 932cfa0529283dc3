"""Experiment configuration (JSON, schema ``o2nc-config/1``).

A config is a JSON object::

    {
      "schema": "o2nc-config/1",
      "objective": {"name": "sharp_valley", "d": 5, "params": {"g": 1.0}},
      "oracle": {"kind": "stochastic", "noise": {"kind": "gaussian", "sigma": 1.118}},
      "learner": {"kind": "ogd"},
      "schedule": {"kind": "nonsmooth"},
      "delta": 0.1,
      "N": 4096,
      "seeds": {"n_trials": 8, "base": 0},
      "output": "runs/valley"
    }

Objective: ``{"name", "d", "params"}`` for catalogue functions or
``{"hard_instance": {"T", "d", "p", "seed", "mode"}}`` for the zero-chain
instance (optionally ``"scaled": {"gamma", "H", "eps", "sigma"}``).

Oracle kinds: ``stochastic`` (with ``noise``), ``deterministic``,
``directional`` and ``smoothed`` (with ``p`` or ``eps``; ``p = eps / G``).

Learner kinds: ``ogd``, ``percoord``, ``omd``, ``careful_hints``; optional
``eta`` and ``Q``.

Schedule kinds: ``explicit`` (``T`` and optionally ``D``, default
``delta / T``), ``nonsmooth``, ``det_smooth`` (optional ``C``, default 1) and
``second_order``. ``delta`` may be the string ``"recommended"`` for the
second-order schedule.

Optional keys: ``gap`` (defaults to ``F(x0) - F_star``), ``x0`` (a list, or
``{"random_scale": r}`` for a per-trial Gaussian perturbation of the default
start), ``s_mode``, ``workers``, ``write_records``, ``rate_window`` (the
accepted slope interval for sweeps).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from o2nc import conversion
from o2nc.hardinstance import GAMMA0, HardInstance, make_hard_instance
from o2nc.objective import NoiseModel, Objective, make_oracle, make_test_function, smoothed_objective
from o2nc.seeding import derive_rng

SCHEMA_ID = "o2nc-config/1"
ORACLE_KINDS = ("stochastic", "deterministic", "directional", "smoothed", "hard")
LEARNER_KINDS = ("ogd", "percoord", "omd", "careful_hints")
SCHEDULE_KINDS = ("explicit", "nonsmooth", "det_smooth", "second_order")


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    cfg = validate(raw)
    cfg.setdefault("output", str(Path(path).with_suffix("")) + "_out")
    return cfg


def validate(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = copy.deepcopy(raw)
    schema = cfg.get("schema", SCHEMA_ID)
    if schema != SCHEMA_ID:
        raise ConfigError(f"unsupported schema {schema!r}; expected {SCHEMA_ID!r}")
    cfg["schema"] = SCHEMA_ID
    for key in ("objective", "N"):
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}")
    if int(cfg["N"]) < 1:
        raise ConfigError("N must be positive")
    oracle = cfg.setdefault("oracle", {"kind": "deterministic"})
    if oracle.get("kind", "stochastic") not in ORACLE_KINDS:
        raise ConfigError(f"unknown oracle kind {oracle.get('kind')!r}")
    learner = cfg.setdefault("learner", {"kind": "ogd"})
    if learner.get("kind", "ogd") not in LEARNER_KINDS:
        raise ConfigError(f"unknown learner kind {learner.get('kind')!r}")
    sched = cfg.setdefault("schedule", {"kind": "explicit", "T": int(cfg["N"])})
    if sched.get("kind") not in SCHEDULE_KINDS:
        raise ConfigError(f"unknown schedule kind {sched.get('kind')!r}")
    if "delta" not in cfg and not (sched["kind"] == "explicit" and "D" in sched):
        raise ConfigError("delta is required unless an explicit D is given")
    cfg.setdefault("seeds", [0])
    return cfg


def trial_seeds(cfg: dict, base_override: int | None = None) -> list[int]:
    seeds = cfg.get("seeds", [0])
    if isinstance(seeds, dict):
        base = int(seeds.get("base", 0)) if base_override is None else base_override
        return [base + i for i in range(int(seeds["n_trials"]))]
    seeds = [int(s) for s in seeds]
    if base_override is not None:
        seeds = [base_override + s for s in seeds]
    return seeds


# -- resolution --------------------------------------------------------------------


@dataclass
class ResolvedExperiment:
    """Concrete objects for one configuration (shared by all trials)."""

    cfg: dict
    objective: Objective
    oracle_kind: str
    noise: NoiseModel
    smoothing_p: float | None
    hard: HardInstance | None
    G_eff: float | None
    gap: float | None
    delta: float
    schedule: Any
    learner_kind: str
    eta: Any
    Q: int
    s_mode: str
    extra: dict = field(default_factory=dict)

    @property
    def run_config(self) -> conversion.RunConfig:
        return conversion.RunConfig(N=int(self.cfg["N"]), T=self.schedule.T, D=self.schedule.D,
                                    s_mode=self.s_mode, oracle_kind=self.oracle_kind)

    def x0(self, seed: int) -> np.ndarray:
        return start_point(self.cfg.get("x0"), self.objective, seed)

    def make_oracle(self):
        if self.hard is not None:
            return self.hard.oracle()
        if self.smoothing_p is not None:
            return make_oracle(smoothed_objective(self.objective, self.smoothing_p), self.noise,
                               directional=False)
        return make_oracle(self.objective, self.noise, directional=self.oracle_kind == "directional")

    def diagnostic_objective(self) -> Objective:
        """Objective whose exact gradient defines the reported metric."""
        if self.smoothing_p is not None:
            return smoothed_objective(self.objective, self.smoothing_p,
                                      mc_samples=int(self.cfg["oracle"].get("mc_samples", 64)))
        return self.objective

    def make_learner(self):
        from o2nc.learners import ResetWrapper, make_learner

        T = self.schedule.T
        D = self.schedule.D
        G = self.G_eff
        if self.learner_kind == "percoord" and G is not None:
            G = np.full(self.objective.d, G / math.sqrt(self.objective.d))
        inner = make_learner(self.learner_kind, self.objective.d, D, eta=self.eta, objective=self.objective,
                             Q=self.Q, G=G, T=T)
        return ResetWrapper(inner, T)


def start_point(spec, obj: Objective, seed: int | None) -> np.ndarray:
    """Configured start; ``{"random_scale": r}`` perturbs the default per trial
    (``seed=None`` returns the unperturbed default)."""
    base = np.asarray(obj.x0_default, dtype=float)
    if spec is None:
        return base.copy()
    if isinstance(spec, dict):
        r = float(spec.get("random_scale", 0.0))
        if seed is None or r == 0.0:
            return base.copy()
        return base + r * derive_rng(seed, "x0").standard_normal(base.size)
    x0 = np.asarray(spec, dtype=float)
    return np.full(base.size, float(x0)) if x0.ndim == 0 else x0


def _build_objective(spec: dict) -> tuple[Objective, HardInstance | None]:
    if "hard_instance" in spec:
        h = spec["hard_instance"]
        if "scaled" in h:
            s = h["scaled"]
            inst = make_hard_instance(s["gamma"], s["H"], s["eps"], s["sigma"], seed=int(h.get("seed", 0)),
                                      d=h.get("d"), mode=h.get("mode", "shifted"))
        else:
            inst = HardInstance.build(int(h["T"]), h.get("d"), float(h.get("p", 1.0)), int(h.get("seed", 0)),
                                      h.get("mode", "shifted"))
        obj = inst.objective()
        obj.F_star = None
        return obj, inst
    if "name" not in spec or "d" not in spec:
        raise ConfigError("objective needs 'name' and 'd' (or a 'hard_instance' descriptor)")
    return make_test_function(spec["name"], {**spec.get("params", {}), "d": int(spec["d"])}), None


def resolve(cfg: dict) -> ResolvedExperiment:
    cfg = validate(cfg)
    obj, hard = _build_objective(cfg["objective"])
    ospec = cfg["oracle"]
    kind = ospec.get("kind", "stochastic")
    if hard is not None:
        kind = "hard"
    nspec = ospec.get("noise") or {"kind": "none"}
    noise = NoiseModel(nspec.get("kind", "gaussian"), float(nspec.get("sigma", 0.0)))
    if kind in ("deterministic", "hard"):
        noise = NoiseModel()
    p = None
    if kind == "smoothed":
        if "p" in ospec:
            p = float(ospec["p"])
        elif "eps" in ospec:
            if obj.G is None:
                raise ConfigError("smoothing radius eps/G needs a Lipschitz objective")
            p = float(ospec["eps"]) / obj.G
        else:
            raise ConfigError("smoothed oracle needs 'p' or 'eps'")
    # Second-moment bound of the oracle output: |grad|^2 + sigma^2.
    G_eff = None if obj.G is None else math.hypot(obj.G, noise.sigma if noise.kind != "none" else 0.0)

    N = int(cfg["N"])
    gap = cfg.get("gap")
    # Randomized starts share one schedule, tuned to the unperturbed start.
    if gap is None and obj.F_star is not None:
        gap = obj.value(start_point(cfg.get("x0"), obj, None)) - obj.F_star
    if gap is None and hard is not None:
        gap = hard.meta.get("gap_bound", GAMMA0 * hard.T * hard.value_scale)
    sspec = cfg["schedule"]
    skind = sspec["kind"]
    lspec = cfg["learner"]
    lkind = lspec.get("kind", "ogd")
    delta = cfg.get("delta")
    Q = int(lspec.get("Q", 0))
    eta = lspec.get("eta")
    if eta is not None and not isinstance(eta, (int, float)):
        eta = np.asarray(eta, dtype=float)
    extra: dict = {}

    if delta == "recommended":
        if skind != "second_order" or obj.H is None or not obj.J or gap is None:
            raise ConfigError("recommended delta needs the second_order schedule with known H, J and gap")
        delta = conversion.recommended_delta_second_order(obj.H, obj.J, gap, N)
    if delta is not None:
        delta = float(delta)

    def need_gap():
        if gap is None or gap <= 0:
            raise ConfigError(f"schedule {skind!r} needs a positive gap F(x0) - F*; set 'gap'")
        return float(gap)

    if skind == "explicit":
        T = int(sspec["T"])
        if T < 1 or T > N:
            raise ConfigError(f"explicit T={T} outside 1..N={N}")
        D = float(sspec["D"]) if "D" in sspec else delta / T
        if delta is None:
            delta = D * T
        schedule = conversion.Schedule(D=D, T=T, K=N // T)
    elif skind == "nonsmooth":
        if G_eff is None:
            raise ConfigError("nonsmooth schedule needs a Lipschitz objective")
        G_sched = G_eff * (math.sqrt(obj.d) if lkind == "percoord" else 1.0)
        schedule = conversion.schedule_nonsmooth(G_sched, need_gap(), N, delta)
    elif skind == "det_smooth":
        if obj.H is None:
            raise ConfigError("det_smooth schedule needs H")
        schedule = conversion.schedule_det_smooth(float(sspec.get("C", 1.0)), obj.H, need_gap(), N, delta)
    else:
        if obj.H is None or obj.J is None or obj.G is None:
            raise ConfigError("second_order schedule needs G, H and J")
        schedule = conversion.schedule_second_order(obj.H, obj.J, need_gap(), N, delta, obj.G)
        if lkind == "careful_hints":
            Q = int(lspec.get("Q", schedule.Q))
            eta = eta if eta is not None else schedule.eta
        extra["grad_evals_per_round"] = schedule.grad_evals_per_round

    s_mode = cfg.get("s_mode", "midpoint" if lkind == "careful_hints" else "uniform")
    return ResolvedExperiment(cfg=cfg, objective=obj, oracle_kind=kind, noise=noise, smoothing_p=p, hard=hard,
                              G_eff=G_eff, gap=None if gap is None else float(gap), delta=float(delta),
                              schedule=schedule, learner_kind=lkind, eta=eta, Q=Q, s_mode=s_mode, extra=extra)
