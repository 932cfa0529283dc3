"""Command-line entry point: ``o2nc <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from o2nc import config as cfgmod
from o2nc import experiment as ex
from o2nc.hardinstance import HardInstance, make_hard_instance, make_nonsmooth_hard_instance
from o2nc.seeding import env_base_seed


def _cmd_run(args) -> int:
    cfg = cfgmod.load_config(args.config)
    if args.output:
        cfg["output"] = args.output
    summ = ex.run_experiment(cfg, workers=args.workers)
    print(f"trials={len(summ.trials)} metric_mean={summ.metric_mean:.6g} "
          f"metric_stderr={summ.metric_stderr:.3g} T={summ.schedule['T']} K={summ.schedule['K']} "
          f"grad_evals={summ.grad_evals} local={summ.all_local}")
    print(f"wrote {Path(cfg['output']) / 'summary.json'}")
    return 0 if summ.all_local else 1


def _parse_values(raw: list[str], param: str) -> list:
    vals = []
    for item in raw:
        for tok in item.split(","):
            tok = tok.strip()
            if tok:
                v = float(eval_power(tok))
                vals.append(int(v) if param == "N" else v)
    return vals


def eval_power(tok: str) -> float:
    """Accept plain numbers and ``b^e`` / ``b**e`` (e.g. ``2^10``)."""
    for op in ("**", "^"):
        if op in tok:
            b, e = tok.split(op, 1)
            return float(b) ** float(e)
    return float(tok)


def _cmd_sweep(args) -> int:
    cfg = cfgmod.load_config(args.config)
    if args.output:
        cfg["output"] = args.output
    if args.window:
        cfg["rate_window"] = args.window
    values = _parse_values(args.values, args.param)

    def progress(v, summ):
        print(f"{args.param}={v} metric_mean={summ.metric_mean:.6g} stderr={summ.metric_stderr:.3g}", flush=True)

    res = ex.sweep(cfg, args.param, values, progress=progress)
    if res.slope is None:
        print("slope not fitted (values span less than one decade)")
        return 0
    print(f"slope={res.slope:.4f} intercept={res.intercept:.4f} r2={res.r2:.4f}")
    if res.window is not None:
        print(f"window=[{res.window[0]}, {res.window[1]}] {'PASS' if res.in_window else 'FAIL'}")
        return 0 if res.in_window else 1
    return 0


def _cmd_verify_identity(args) -> int:
    cfg = cfgmod.load_config(args.config)
    r = cfgmod.resolve(cfg)
    worst = 0.0
    for seed in cfgmod.trial_seeds(r.cfg, env_base_seed()):
        trial = ex.run_trial(r, seed)
        err = ex.verify_identity(r.diagnostic_objective(), trial.record, args.nodes, mode=args.mode)
        worst = max(worst, err)
        print(f"seed={seed} relative_error={err:.3e}")
    ok = worst <= args.tol
    print(f"max_relative_error={worst:.3e} tol={args.tol:g} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_verify_regret(args) -> int:
    with open(args.battery, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    G = float(spec.get("G", 1.0))
    d = int(spec.get("d", 3))
    seed = int(spec.get("seed", 0) if env_base_seed() is None else env_base_seed())
    seqs = ex.regret_battery(int(spec.get("n_random", 1000)), int(spec.get("T_max", 256)), d, G, seed,
                             spec.get("T"))
    learner = dict(spec.get("learner", {"kind": "ogd"}))
    learner.setdefault("D", float(spec.get("D", 1.0)))
    learner.setdefault("G", G)
    hints = None
    if learner.get("kind") == "omd":
        rng = np.random.default_rng(seed)
        hints = [ex.random_hints(s, G, rng) for s in seqs]
    rep = ex.verify_regret(learner, seqs, spec.get("comparator", "static"), hints, spec.get("bound", "per_sequence"))
    print(f"sequences={rep.n_sequences} violations={rep.violations} worst_slack={rep.worst_slack:.6g} "
          f"{'PASS' if rep.passed else 'FAIL'}")
    return 0 if rep.passed else 1


def _load_instance(path) -> HardInstance:
    with open(path, "r", encoding="utf-8") as fh:
        desc = json.load(fh)
    seed = int(desc.get("seed", 0))
    mode = desc.get("mode", "shifted")
    if "nonsmooth" in desc:
        s = desc["nonsmooth"]
        return make_nonsmooth_hard_instance(s["delta"], s["eps"], s["gamma"], s["G"], seed, desc.get("d"), mode)
    if "scaled" in desc:
        s = desc["scaled"]
        return make_hard_instance(s["gamma"], s["H"], s["eps"], s["sigma"], seed, desc.get("d"), mode)
    return HardInstance.build(int(desc["T"]), desc.get("d"), float(desc.get("p", 1.0)), seed, mode)


def _cmd_hard_instance(args) -> int:
    inst = _load_instance(args.descriptor)
    seed = args.seed if args.seed is not None else (env_base_seed() or 0)
    rep = ex.stress(inst, args.stress, args.queries, seed=seed)
    ok = rep.zero_chain_violations == 0 and rep.pin_violations == 0
    print(json.dumps({"instance": inst.descriptor(), "optimizer": args.stress, **rep.__dict__}, sort_keys=True))
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="o2nc", description="Online-to-non-convex conversion experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every trial of a config")
    r.add_argument("config")
    r.add_argument("--output", help="override the output directory")
    r.add_argument("--workers", type=int, default=None)
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="sweep N or delta and fit a power law")
    s.add_argument("config")
    s.add_argument("--param", choices=("N", "delta"), required=True)
    s.add_argument("--values", nargs="+", required=True, help="values, e.g. 2^10 2^11 or 1024,2048")
    s.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"), help="accepted slope interval")
    s.add_argument("--output")
    s.set_defaults(func=_cmd_sweep)

    v = sub.add_parser("verify-identity", help="check the telescoping identity on a config's runs")
    v.add_argument("config")
    v.add_argument("--nodes", type=int, default=16)
    v.add_argument("--mode", choices=("gauss", "mc"), default="gauss")
    v.add_argument("--tol", type=float, default=1e-6)
    v.set_defaults(func=_cmd_verify_identity)

    g = sub.add_parser("verify-regret", help="run a regret battery described by a JSON file")
    g.add_argument("battery")
    g.set_defaults(func=_cmd_verify_regret)

    h = sub.add_parser("hard-instance", help="stress an optimizer against the zero-chain instance")
    h.add_argument("descriptor")
    h.add_argument("--stress", choices=("sgd", "o2nc"), required=True)
    h.add_argument("--queries", type=int, default=10_000)
    h.add_argument("--seed", type=int, default=None)
    h.set_defaults(func=_cmd_hard_instance)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (cfgmod.ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
