"""Command-line entry point: ``retrofit <verb> --config <path|bundled:name>``."""

from __future__ import annotations

import argparse
import json
import sys

from .config import RunConfig, bundled_names, load_config, parse_config
from .errors import ConfigError
from .pipeline import EXIT_CONFIG, PipelineError, run_pipeline

VERBS = ("classify", "reverse", "redesign", "simulate", "certify", "pipeline")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retrofit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="config path or bundled:<name>")
        p.add_argument("--out", help="output directory (default: the config's output.dir)")
        p.add_argument("--method", choices=("HB", "AGD", "AL", "HATX"),
                       help="replace the configured redesigns with this one")
        p.add_argument("--beta", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--retune-step", type=_bool, metavar="BOOL")
        p.add_argument("--beta-schedule", choices=("constant", "nesterov"))
        p.add_argument("--steps", type=int)
        p.add_argument("--plot", action="store_true", help="emit SVG line plots")
    sub.add_parser("list", help="list bundled scenarios")
    return parser


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    data = cfg.model_dump(mode="json")
    if args.method:
        data["redesign"] = [{"method": args.method}]
    for spec in data["redesign"]:
        if args.beta is not None:
            spec["beta"] = args.beta
        if args.alpha is not None:
            spec["alpha"] = args.alpha
        if args.retune_step is not None:
            spec["retune_step"] = args.retune_step
        if args.beta_schedule is not None:
            spec["beta_schedule"] = args.beta_schedule
    if args.steps is not None:
        data["run"]["steps"] = args.steps
    if args.plot:
        data["output"]["plot"] = True
    if args.out:
        data["output"]["dir"] = args.out
    return parse_config(data)


def _summary(verb: str, data: dict) -> dict:
    keys = {
        "classify": ("classification",),
        "reverse": ("classification", "reverse"),
        "redesign": ("classification", "redesign"),
        "simulate": ("classification", "redesign", "summary"),
        "certify": ("classification", "certificates"),
        "pipeline": ("classification", "redesign", "certificates", "summary"),
    }[verb]
    out = {k: data[k] for k in keys if k in data}
    if "summary" in keys and "metrics" in data:
        out["summary"] = {name: {kk: vv for kk, vv in m.items() if kk != "errors"}
                          for name, m in data["metrics"].items()}
    for k in ("stopped_at", "diverged", "exit_code"):
        if k in data:
            out[k] = data[k]
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "list":
        print("\n".join(bundled_names()))
        return 0
    try:
        cfg = apply_overrides(load_config(args.config), args)
        writes = args.verb in ("simulate", "certify", "pipeline")
        rep = run_pipeline(cfg, cfg.output.dir if writes else None, args.verb)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps(_summary(args.verb, rep.data), indent=2, default=str))
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
