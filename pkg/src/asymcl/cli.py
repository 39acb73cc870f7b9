"""Command-line entry point: ``asymcl run|grid|check|info-theory``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import infotheory as it
from .checks import ALL_CHECKS, run_checks
from .errors import ValidationError
from .harness import ExperimentConfig, emit_results, run_experiment, run_grid

# CLI flag -> ExperimentConfig field
_FLAG_FIELDS = {
    "seed": "seed", "scenario": "scenario", "loss": "loss", "eta": "eta", "gamma": "gamma",
    "tau": "tau", "epochs1": "epochs1", "epochs2": "epochs2", "lr": "lr",
    "batch_size": "batch_size", "data": "data", "images": "images", "labels": "labels",
    "stage2_loss": "stage2_loss", "total": "total",
}


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with experiment settings; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write results here instead of stdout")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--scenario", help="majority:minority proportion, e.g. 90:10")
    p.add_argument("--loss", choices=("cl", "fcl", "acl", "afcl"))
    p.add_argument("--eta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=float, help="temperature (default 0.07)")
    p.add_argument("--epochs1", type=int, help="stage-1 epochs (default 20)")
    p.add_argument("--epochs2", type=int, help="stage-2 epochs (default 10)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-2)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="default 128")
    p.add_argument("--data", choices=("synthetic", "idx"))
    p.add_argument("--images", help="IDX image file (with --data idx)")
    p.add_argument("--labels", help="IDX label file (with --data idx)")
    p.add_argument("--stage2-loss", dest="stage2_loss", choices=("ce", "fl"))
    p.add_argument("--total", type=int, help="samples per scenario (default 1000)")


def build_config(args) -> ExperimentConfig:
    settings = {}
    if args.config:
        settings = json.loads(Path(args.config).read_text())
        if not isinstance(settings, dict):
            raise ValidationError("config file must hold a JSON object")
    for flag, name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings[name] = value
    return ExperimentConfig.from_dict(settings)


def _write(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    row = run_experiment(build_config(args))
    _write(emit_results([row], args.format), args.out)
    if row.error:
        print(f"error: {row.error}", file=sys.stderr)
        return 1
    return 0


def cmd_grid(args) -> int:
    base = build_config(args)
    scenarios = args.scenarios.split(",") if args.scenarios else None
    tables = ("eta", "gamma", "losses") if args.table == "all" else (args.table,)
    failed = False
    for table in tables:
        cells = run_grid(base, table, scenarios=scenarios, repeats=args.repeats,
                         workers=args.workers)
        out = args.out
        if out and len(tables) > 1:
            path = Path(out)
            out = str(path.with_name(f"{path.stem}_{table}{path.suffix}"))
        _write(emit_results([c.row for c in cells], args.format), out)
        if args.runs_out:
            path = Path(args.runs_out)
            runs_path = path if len(tables) == 1 else path.with_name(f"{path.stem}_{table}{path.suffix}")
            emit_results([r for c in cells for r in c.runs], args.format, runs_path)
        failed |= any(c.row.error for c in cells)
    return 1 if failed else 0


def cmd_check(args) -> int:
    results = run_checks(args.only or None)
    n_ok = sum(r.passed for r in results)
    print(f"{n_ok}/{len(results)} checks passed")
    return 0 if n_ok == len(results) else 1


def info_theory_report(spec: dict) -> dict:
    """Evaluate whatever quantities the given distributions support."""
    report = {}
    if "p" in spec:
        p = it.Pmf(spec["p"])
        report["entropy"] = it.entropy(p)
        if "q" in spec:
            q = it.Pmf(spec["q"])
            report["kl_divergence"] = it.kl_divergence(p, q)
            report["cross_entropy"] = it.cross_entropy(p, q)
    if "joint" in spec:
        j = it.JointPmf(spec["joint"])
        report["joint_entropy"] = it.joint_entropy(j)
        report["conditional_entropy"] = it.conditional_entropy(j)
        report["mutual_information"] = it.mutual_information(j)
        if "estimate" in spec:
            report["conditional_cross_entropy"] = it.conditional_cross_entropy(
                j, it.JointPmf(spec["estimate"]))
    if "n" in spec:
        report["uniform_entropy"] = it.uniform_entropy(spec["n"])
    if not report:
        raise ValidationError("expected at least one of the keys p, joint, n")
    return report


def cmd_info_theory(args) -> int:
    if args.input:
        text = Path(args.input).read_text()
    elif args.json:
        text = args.json
    else:
        text = sys.stdin.read()
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc}") from None
    if not isinstance(spec, dict):
        raise ValidationError("distribution spec must be a JSON object")
    _write(json.dumps(info_theory_report(spec), indent=2) + "\n", args.out)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asymcl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate a single experiment")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="reproduce the eta / gamma / loss-comparison tables")
    _add_experiment_flags(p)
    p.add_argument("--table", choices=("eta", "gamma", "losses", "all"), default="eta")
    p.add_argument("--scenarios", help="comma-separated list; default all eleven (or --scenario for losses)")
    p.add_argument("--repeats", type=int, default=4)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--runs-out", dest="runs_out", help="also write every individual run here")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("check", help="run the invariant and oracle suites")
    p.add_argument("--only", nargs="+", choices=sorted(ALL_CHECKS))
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("info-theory", help="entropy / KL / MI of distributions given as JSON")
    p.add_argument("json", nargs="?", help='e.g. \'{"p": [0.5, 0.5], "q": [0.9, 0.1]}\'')
    p.add_argument("--input", help="read the JSON from this file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_info_theory)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
