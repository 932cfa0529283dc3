"""Running configured experiments, sweeps and the two verification checks."""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from o2nc.config import ConfigError, ResolvedExperiment, resolve, trial_seeds
from o2nc.conversion import RunConfig, RunRecord, run_o2nc
from o2nc.hardinstance import HardInstance, StressReport, stress_sgd
from o2nc.learners import (
    OGD,
    OptimisticOMD,
    PerCoordinateOGD,
    ResetWrapper,
    build_comparators,
    ogd_regret_bound,
    omd_regret_bound,
    percoord_regret_bound,
    realized_regret,
)
from o2nc.objective import Objective
from o2nc.seeding import derive_rng, env_base_seed

SUMMARY_SCHEMA = "o2nc-summary/1"
RECORD_COLUMNS = ("n", "k", "t", "x_norm", "F_x", "g_norm", "delta_norm")
EPOCH_COLUMNS = ("k", "wbar_norm", "grad_avg_norm", "radius", "F_wbar")
SWEEP_COLUMNS = ("param_value", "metric_mean", "metric_stderr", "n_trials")
LOCALITY_RTOL = 1e-12
# The worst-case regret bound is attained exactly by some sequences (e.g. T = 1),
# so slack is compared against rounding at this relative level.
REGRET_RTOL = 1e-12


# -- output helpers ------------------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    return repr(float(v))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


# -- single trial ------------------------------------------------------------------


@dataclass
class TrialResult:
    seed: int
    metric: float
    locality: float
    locality_ok: bool
    grad_evals: int
    oracle_calls: int
    F_final: float | None
    record: RunRecord | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"seed": self.seed, "metric": self.metric, "locality": self.locality,
                "locality_ok": self.locality_ok, "grad_evals": self.grad_evals,
                "oracle_calls": self.oracle_calls, "F_final": self.F_final, **self.extra}


def locality_norm(res: ResolvedExperiment) -> str:
    return "linf" if res.learner_kind == "percoord" else "l2"


def run_trial(res: ResolvedExperiment, seed: int, keep_record: bool = True) -> TrialResult:
    oracle = res.make_oracle()
    learner = res.make_learner()
    rc = res.run_config
    rc = RunConfig(N=rc.N, T=rc.T, D=rc.D, s_mode=rc.s_mode, seed=int(seed), oracle_kind=rc.oracle_kind)
    diag = res.diagnostic_objective()
    rec = run_o2nc(oracle, learner, rc, res.x0(seed), objective=diag,
                   track_values=bool(res.cfg.get("track_values", True)))
    loc = rec.locality(locality_norm(res))
    ok = loc <= res.delta * (1.0 + LOCALITY_RTOL)
    extra = {}
    if res.hard is not None:
        ck = oracle.check
        extra["zero_chain_violations"] = ck.violations
        extra["max_query_prog"] = ck.max_query_prog
    return TrialResult(
        seed=int(seed),
        metric=float(np.mean(rec.per_epoch_grad_avg_norm)),
        locality=loc,
        locality_ok=bool(ok),
        grad_evals=rec.grad_evals,
        oracle_calls=rec.oracle_calls,
        F_final=None if rec.fvals is None else float(rec.fvals[-1]),
        record=rec if keep_record else None,
        extra=extra,
    )


def record_rows(rec: RunRecord):
    T = rec.T
    xn = np.linalg.norm(rec.xs[1:], axis=1)
    gn = np.linalg.norm(rec.gs, axis=1)
    dn = np.linalg.norm(rec.deltas, axis=1)
    fx = rec.fvals[1:] if rec.fvals is not None else np.full(rec.M, np.nan)
    for n in range(rec.M):
        yield (n + 1, n // T + 1, n % T + 1, xn[n], fx[n], gn[n], dn[n])


def epoch_rows(rec: RunRecord, objective: Objective | None = None):
    wbar = rec.epoch_averages
    radius = np.linalg.norm(rec.ws.reshape(rec.K, rec.T, -1) - wbar[:, None, :], axis=2).max(axis=1)
    ga = rec.per_epoch_grad_avg_norm if rec.per_epoch_grad_avg_norm is not None else np.full(rec.K, np.nan)
    for k in range(rec.K):
        fw = objective.value(wbar[k]) if objective is not None else float("nan")
        yield (k + 1, float(np.linalg.norm(wbar[k])), ga[k], radius[k], fw)


def witness_entries(rec: RunRecord) -> list[dict]:
    """Epoch witness sets as ``{k, center, radius, value}`` (points are the epoch's query points)."""
    wbar = rec.epoch_averages
    dev = rec.ws.reshape(rec.K, rec.T, -1) - wbar[:, None, :]
    radius = np.linalg.norm(dev, axis=2).max(axis=1)
    vals = rec.per_epoch_grad_avg_norm
    return [{"k": k + 1, "center": wbar[k], "radius": float(radius[k]),
             "value": None if vals is None else float(vals[k])} for k in range(rec.K)]


# -- experiments -------------------------------------------------------------------


@dataclass
class ExperimentSummary:
    trials: list
    metric_mean: float
    metric_stderr: float
    schedule: dict
    delta: float
    gap: float | None
    grad_evals: int
    all_local: bool
    payload: dict


def _trial_worker(args):
    cfg, seed = args
    return run_trial(resolve(cfg), seed, keep_record=True)


def _stderr(xs) -> float:
    xs = np.asarray(xs, dtype=float)
    return float(xs.std(ddof=1) / math.sqrt(xs.size)) if xs.size > 1 else 0.0


def run_experiment(cfg: dict, output: str | os.PathLike | None = None, write: bool = True,
                   workers: int | None = None) -> ExperimentSummary:
    """One conversion run per trial seed; writes per-run record and epoch CSVs
    plus ``summary.json`` under the output directory."""
    res = resolve(cfg)
    cfg = res.cfg
    seeds = trial_seeds(cfg, env_base_seed())
    if not seeds:
        raise ConfigError("no trial seeds")
    workers = int(workers or cfg.get("workers", 1))
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            trials = list(ex.map(_trial_worker, [(cfg, s) for s in seeds]))
    else:
        trials = [run_trial(res, s) for s in seeds]

    metrics = [t.metric for t in trials]
    sched = {"D": res.schedule.D, "T": res.schedule.T, "K": res.schedule.K}
    if res.learner_kind == "careful_hints":
        sched["Q"] = res.Q
        sched["eta"] = float(res.eta)
    payload = {
        "schema": SUMMARY_SCHEMA,
        "config": cfg,
        "schedule": sched,
        "delta": res.delta,
        "gap": res.gap,
        "trials": [t.as_dict() for t in trials],
        "metric_mean": float(np.mean(metrics)),
        "metric_stderr": _stderr(metrics),
        "n_trials": len(trials),
        "grad_evals": int(sum(t.grad_evals for t in trials)),
        "all_local": all(t.locality_ok for t in trials),
    }
    out = output if output is not None else cfg.get("output")
    if write and out is not None:
        out = Path(out)
        diag = res.diagnostic_objective()
        if cfg.get("write_records", True):
            for t in trials:
                atomic_write_text(out / f"run_{t.seed}.csv", _csv_text(RECORD_COLUMNS, record_rows(t.record)))
                atomic_write_text(out / f"epochs_{t.seed}.csv",
                                  _csv_text(EPOCH_COLUMNS, epoch_rows(t.record, diag)))
                atomic_write_text(out / f"witnesses_{t.seed}.json", dumps(witness_entries(t.record)))
        atomic_write_text(out / "summary.json", dumps(payload))
    return ExperimentSummary(trials=trials, metric_mean=payload["metric_mean"],
                             metric_stderr=payload["metric_stderr"], schedule=sched, delta=res.delta,
                             gap=res.gap, grad_evals=payload["grad_evals"], all_local=payload["all_local"],
                             payload=payload)


# -- sweeps and fitting ------------------------------------------------------------


def fit_power_law(points) -> tuple[float, float, float]:
    """Least squares on ``(log x, log y)``; returns ``(slope, intercept, r2)``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("need at least two (x, y) points")
    if np.any(pts <= 0):
        raise ValueError("power-law fit needs positive coordinates")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(lx) == 0:
        raise ValueError("x values must not all coincide")
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r2)


@dataclass
class SweepResult:
    param: str
    values: list
    means: list
    stderrs: list
    n_trials: list
    slope: float | None
    intercept: float | None
    r2: float | None
    window: tuple | None = None

    @property
    def in_window(self) -> bool | None:
        if self.window is None or self.slope is None:
            return None
        lo, hi = self.window
        return lo <= self.slope <= hi

    def rows(self):
        return zip(self.values, self.means, self.stderrs, self.n_trials)


def fit_sweep(param: str, values, means, stderrs=None, n_trials=None, window=None) -> SweepResult:
    values = [float(v) for v in values]
    if len(values) < 4:
        raise ValueError("a sweep needs at least 4 values")
    stderrs = list(stderrs) if stderrs is not None else [0.0] * len(values)
    n_trials = list(n_trials) if n_trials is not None else [1] * len(values)
    slope = intercept = r2 = None
    if max(values) / min(values) >= 10.0:
        slope, intercept, r2 = fit_power_law(zip(values, means))
    return SweepResult(param, values, [float(m) for m in means], [float(s) for s in stderrs],
                       [int(n) for n in n_trials], slope, intercept, r2,
                       None if window is None else tuple(float(w) for w in window))


def sweep(cfg: dict, param: str, values: Sequence, output=None, write: bool = True,
          progress=None) -> SweepResult:
    """Run :func:`run_experiment` for each value of ``N`` or ``delta`` and fit
    ``log metric`` against ``log value``."""
    if param not in ("N", "delta"):
        raise ValueError(f"can only sweep N or delta, not {param!r}")
    if len(values) < 4:
        raise ValueError("a sweep needs at least 4 values")
    out = output if output is not None else cfg.get("output")
    means, ses, ns = [], [], []
    for v in values:
        c = copy.deepcopy(cfg)
        c[param] = int(v) if param == "N" else float(v)
        c.setdefault("write_records", False)
        sub = None if out is None else Path(out) / f"{param}_{v}"
        summ = run_experiment(c, output=sub, write=write and out is not None)
        if not summ.all_local:
            raise AssertionError(f"locality bound violated at {param}={v}")
        means.append(summ.metric_mean)
        ses.append(summ.metric_stderr)
        ns.append(len(summ.trials))
        if progress is not None:
            progress(v, summ)
    result = fit_sweep(param, values, means, ses, ns, cfg.get("rate_window"))
    if write and out is not None:
        atomic_write_text(Path(out) / "sweep.csv", _csv_text(SWEEP_COLUMNS, result.rows()))
        atomic_write_text(Path(out) / "sweep.json", dumps({
            "param": param, "values": result.values, "metric_mean": result.means,
            "metric_stderr": result.stderrs, "n_trials": result.n_trials, "slope": result.slope,
            "intercept": result.intercept, "r2": result.r2, "window": result.window,
            "in_window": result.in_window}))
    return result


# -- telescoping identity ----------------------------------------------------------


def verify_identity(obj: Objective, record: RunRecord, quad_nodes: int = 16, mode: str = "gauss",
                    mc_samples: int = 64, seed: int = 0) -> float:
    """Relative error of ``F(x_M) - F(x_0) = sum_n <avg grad on segment n, delta_n>``.

    The segment averages are Gauss-Legendre quadratures (``mode="gauss"``) or
    Monte-Carlo over uniform ``s`` (``mode="mc"``, a cross-check only).
    """
    if not obj.has_grad:
        raise ValueError("identity check needs exact gradients")
    xs = record.xs
    deltas = record.deltas
    if mode == "gauss":
        if quad_nodes < 1:
            raise ValueError("need at least one quadrature node")
        nodes, weights = np.polynomial.legendre.leggauss(quad_nodes)
        s, w = 0.5 * (nodes + 1.0), 0.5 * weights
    elif mode == "mc":
        s = derive_rng(seed, "identity_mc").random(mc_samples)
        w = np.full(mc_samples, 1.0 / mc_samples)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    total = 0.0
    for n in range(deltas.shape[0]):
        dn = deltas[n]
        if not np.any(dn):
            continue
        avg = sum(wj * obj.grad(xs[n] + sj * dn) for sj, wj in zip(s, w))
        total += float(np.dot(avg, dn))
    change = obj.value(xs[-1]) - obj.value(xs[0])
    return abs(change - total) / (1.0 + abs(change))


# -- regret battery ----------------------------------------------------------------


def adversarial_sequences(T: int, d: int, G: float) -> list[np.ndarray]:
    e1 = np.zeros(d)
    e1[0] = G
    t = np.arange(T)
    seqs = [np.tile(e1, (T, 1)),
            np.outer((-1.0) ** t, e1),
            np.outer(np.where(t < T // 2, 1.0, -1.0), e1)]
    rot = np.zeros((T, d))
    ang = 2 * np.pi * t / max(T, 1)
    rot[:, 0] = G * np.cos(ang)
    if d > 1:
        rot[:, 1] = G * np.sin(ang)
    seqs.append(rot)
    burst = np.zeros((T, d))
    burst[T - max(1, T // 8):] = -e1
    seqs.append(burst)
    period = max(1, int(math.isqrt(T)))
    seqs.append(np.outer(np.where((t // period) % 2 == 0, 1.0, -1.0), e1) * np.where(t % 3 == 0, 1.0, 0.5)[:, None])
    return seqs


def regret_battery(n_random: int = 1000, T_max: int = 256, d: int = 3, G: float = 1.0, seed: int = 0,
                   T_fixed: int | None = None) -> list[np.ndarray]:
    """Random sequences (mixed families, lengths up to ``T_max``) followed by
    six deterministic adversarial ones of length ``T_max``; all have ``|g| <= G``."""
    rng = derive_rng(seed, "regret_battery")
    seqs = []
    for i in range(n_random):
        T = T_fixed or int(rng.integers(1, T_max + 1))
        fam = i % 4
        if fam == 0:
            g = rng.choice([-1.0, 1.0], size=(T, d)) * (G / math.sqrt(d))
        elif fam == 1:
            z = rng.standard_normal((T, d))
            g = G * z / np.linalg.norm(z, axis=1, keepdims=True)
        elif fam == 2:
            z = rng.standard_normal((T, d))
            g = G * z / np.linalg.norm(z, axis=1, keepdims=True) * rng.random((T, 1))
        else:
            base = rng.standard_normal(d)
            z = base + 0.3 * rng.standard_normal((T, d))
            g = G * z / np.linalg.norm(z, axis=1, keepdims=True)
        seqs.append(g)
    seqs.extend(adversarial_sequences(T_fixed or T_max, d, G))
    return seqs


def random_hints(seq: np.ndarray, G: float, rng: np.random.Generator) -> np.ndarray:
    """Hints of norm at most ``G``: either unrelated or a noisy copy of ``g``."""
    T, d = seq.shape
    if rng.random() < 0.5:
        z = rng.standard_normal((T, d))
        return G * z / np.linalg.norm(z, axis=1, keepdims=True) * rng.random((T, 1))
    h = seq + rng.uniform(0, 0.5) * G * rng.standard_normal((T, d)) / math.sqrt(d)
    n = np.linalg.norm(h, axis=1, keepdims=True)
    return np.where(n > G, h * (G / np.maximum(n, 1e-300)), h)


@dataclass
class RegretReport:
    worst_slack: float
    n_sequences: int
    violations: int
    slacks: np.ndarray
    bounds: np.ndarray

    @property
    def passed(self) -> bool:
        return self.violations == 0


def verify_regret(learner_spec: dict, sequences: Sequence, comparator: str = "static",
                  hints: Sequence | None = None, bound: str = "per_sequence") -> RegretReport:
    """Worst slack ``bound - realized regret`` over a battery.

    ``learner_spec``: ``kind`` (ogd/percoord/omd), ``D``, ``G``, optional
    ``eta`` (default ``D / (G sqrt(T))`` per sequence) and, for
    ``comparator="shifting"``, the epoch length ``T``. ``bound`` is
    ``per_sequence`` (step-size dependent) or ``worst_case`` (``D G sqrt(T)`` per epoch).
    """
    kind = learner_spec.get("kind", "ogd")
    D = float(learner_spec["D"])
    G = float(learner_spec["G"])
    slacks, bounds = [], []
    for idx, seq in enumerate(sequences):
        gs = np.atleast_2d(np.asarray(seq, dtype=float))
        n, d = gs.shape
        # Per-coordinate learners bound each coordinate separately.
        norms = np.abs(gs).max(axis=1) if kind == "percoord" else np.linalg.norm(gs, axis=1)
        if np.any(norms > G * (1 + 1e-12)):
            raise ValueError(f"sequence {idx} violates the gradient bound G={G}")
        T = int(learner_spec.get("T", n)) if comparator == "shifting" else n
        if n % T:
            raise ValueError(f"sequence {idx} length {n} is not a multiple of T={T}")
        eta = learner_spec.get("eta")
        eta = D / (G * math.sqrt(T)) if eta is None else float(eta)
        hs = None
        if kind == "ogd":
            inner = OGD(d, D, eta)
        elif kind == "percoord":
            inner = PerCoordinateOGD(d, D, eta)
        elif kind == "omd":
            if hints is None:
                raise ValueError("optimistic learner needs a hint sequence per gradient sequence")
            hs = np.atleast_2d(np.asarray(hints[idx], dtype=float))
            inner = OptimisticOMD(d, D, eta, hint_fn=lambda t, hs=hs: hs[t])
        else:
            raise ValueError(f"unknown learner kind {kind!r}")
        learner = ResetWrapper(inner, T)
        deltas = np.empty_like(gs)
        for t in range(n):
            deltas[t] = learner.propose()
            learner.update(gs[t])
        windows = gs.reshape(n // T, T, d)
        comps = build_comparators(windows, D, "linf" if kind == "percoord" else "l2")
        realized = realized_regret(gs, deltas, comps)
        if bound == "worst_case":
            per = D * G * math.sqrt(T) * (d if kind == "percoord" else 1)
            b = per * (n // T)
        else:
            b = 0.0
            for k in range(n // T):
                wg = windows[k]
                if kind == "ogd":
                    b += ogd_regret_bound(D, eta, wg)
                elif kind == "percoord":
                    b += percoord_regret_bound(D, eta, wg)
                else:
                    b += omd_regret_bound(D, eta, wg, hs[k * T:(k + 1) * T])
        slacks.append(b - realized)
        bounds.append(b)
    slacks = np.array(slacks)
    bounds = np.array(bounds)
    bad = slacks < -REGRET_RTOL * np.maximum(1.0, np.abs(bounds))
    return RegretReport(worst_slack=float(slacks.min()) if slacks.size else math.inf,
                        n_sequences=int(slacks.size), violations=int(np.sum(bad)), slacks=slacks, bounds=bounds)


# -- hard-instance stress ----------------------------------------------------------


def stress_o2nc(instance: HardInstance, n_queries: int, T: int = 50, delta: float = 1.0,
                seed: int = 0) -> StressReport:
    """Conversion with OGD against the zero-chain oracle; pins checked on every iterate."""
    M = (n_queries // T) * T
    if M < T:
        raise ValueError("query budget smaller than one epoch")
    oracle = instance.oracle()
    D = delta / T
    G = 23.0 / instance.p + 92.0 * math.sqrt(instance.T)
    learner = ResetWrapper(OGD(instance.d, D, D / (G * instance.grad_scale * math.sqrt(T))), T)
    rec = run_o2nc(oracle, learner, RunConfig(N=M, T=T, D=D, seed=seed, oracle_kind="hard"),
                   np.zeros(instance.d), objective=None, track_values=False)
    pinned = bad = 0
    min_g = math.inf
    for x in rec.xs[:-1]:
        if instance.pinned(x):
            pinned += 1
            gn = float(np.linalg.norm(instance.grad(x)))
            min_g = min(min_g, gn)
            bad += gn < instance.pin_threshold
    ck = oracle.check
    return StressReport(M, ck.violations, pinned, bad, min_g, ck.max_query_prog, ck.reveals, ck.unfired_reveals)


def stress(instance: HardInstance, optimizer: str, n_queries: int = 10_000, seed: int = 0, **kw) -> StressReport:
    if optimizer == "sgd":
        return stress_sgd(instance, n_queries, seed=seed, **kw)
    if optimizer == "o2nc":
        return stress_o2nc(instance, n_queries, seed=seed, **kw)
    raise ValueError(f"unknown optimizer {optimizer!r}; choose sgd or o2nc")
