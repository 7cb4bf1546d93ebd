"""``ranlb`` command line: train, eval, calibrate, sweep, ablate, report."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import experiments as ex
from .config import SWEEP_AXES, ConfigError, load_config


def parse_seeds(text):
    """``"3"`` -> (3,), ``"0..2"`` -> (0, 1, 2), ``"0,4"`` -> (0, 4)."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return tuple(range(lo, hi + 1))
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed range {text!r}; use N, N..M or N,M,...") from None


def parse_set(items):
    """``a.b=value`` pairs into a nested mapping (values parsed as YAML)."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def build_parser():
    ap = argparse.ArgumentParser(prog="ranlb", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="YAML file overlaid on the preset")
        p.add_argument("--preset", choices=("desk", "full"), default="desk")
        p.add_argument("--out", type=Path, help="results directory (default: config 'out')")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--seed", type=int)
        g.add_argument("--seeds", type=parse_seeds, help="N..M inclusive range or comma list")
        return p

    p = common(sub.add_parser("train", help="train a method (rule-based methods are simply run)"))
    p.add_argument("--method", choices=ex.METHODS, default="ppo")
    p = common(sub.add_parser("eval", help="evaluate frozen policies"))
    p.add_argument("--method", default="ppo,cdql,rebuha,a3", help="comma-separated methods")
    common(sub.add_parser("calibrate", help="percentile anchors from A3 runs on held-out seeds"))
    p = common(sub.add_parser("sweep", help="evaluate frozen policies over a parameter grid"))
    p.add_argument("--axis", required=True, choices=(*SWEEP_AXES, "robustness"))
    p.add_argument("--method", default="ppo,cdql,rebuha,a3", help="comma-separated methods")
    p = common(sub.add_parser("ablate", help="reward-weight ablations of PPO"))
    p.add_argument("--variants", help="comma-separated subset of variants")
    p.add_argument("--no-perturbations", action="store_true", help="skip the +-50%% per-weight variants")
    common(sub.add_parser("report", help="tables and figure data from a results directory"))
    return ap


def _methods(text):
    ms = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in ms if m not in ex.METHODS]
    if bad:
        raise ConfigError(f"unknown method(s) {bad}; expected from {', '.join(ex.METHODS)}")
    return ms


def run(args):
    cfg = load_config(args.config, args.preset, parse_set(args.set))
    if args.seed is not None:
        cfg.seeds = (args.seed,)
    elif args.seeds is not None:
        cfg.seeds = args.seeds
    cfg.__post_init__()
    out = Path(args.out) if args.out else Path(cfg.out)
    cmd = args.command
    if cmd != "report":
        ex.save_results_config(cfg, out)
    if cmd == "calibrate":
        refs = ex.calibrate(cfg, out)
        for k, a in refs.anchors.items():
            print(f"{k}: m={a.low:.6g} M={a.high:.6g}{' (widened)' if a.widened else ''}")
        print(f"wrote {ex.Paths(out).anchors}")
    elif cmd == "train":
        for seed in cfg.seeds:
            logs = ex.train_method(cfg, args.method, seed, out)
            print(f"{args.method} seed {seed}: {len(logs)} episodes -> {ex.Paths(out).train_log(args.method, seed)}")
    elif cmd == "eval":
        rows = []
        for method in _methods(args.method):
            for seed in cfg.seeds:
                rows.append({"method": method, "axis": "none", "value": "", "seed": seed,
                             **ex.evaluate(cfg, method, seed, out)})
        path = out / "eval.csv"
        ex.write_csv(path, rows, ex.EVAL_COLUMNS, cfg.config_hash())
        print(f"wrote {path}")
    elif cmd == "sweep":
        methods = _methods(args.method)
        if args.axis == "robustness":
            ex.robustness(cfg, methods, out)
        else:
            ex.sweep(cfg, args.axis, methods, out)
        print(f"wrote {out / 'sweeps' / (args.axis + '.csv')}")
    elif cmd == "ablate":
        variants = [v.strip() for v in args.variants.split(",")] if args.variants else None
        ex.ablate(cfg, out, variants, perturbations=not args.no_perturbations)
        print(f"wrote {out / 'ablation' / 'ablation.csv'}")
    elif cmd == "report":
        files = ex.report(out, cfg)
        if not files:
            print(f"warning: no results under {out}; empty report", file=sys.stderr)
        for f in files:
            print(f)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, ex.ResultsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
