"""Command-line entry point: ``elastowave <subcommand> [options]``.

Exit status is 0 when every verdict passes, 1 on a failed verdict or an
aborted run, 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as X
from .analysis import CSV_COLUMNS, FitError, boundedness_check, growth_exponent_fit
from .material import tensor_to_json
from .solver import ConfigError

log = logging.getLogger("elastowave")

COMMANDS = ("check-tensor", "verify-commutators", "convergence", "simulate", "theorem1-proxy", "theorem2-proxy")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, X.Verdict):
        return {"name": obj.name, "pass": obj.passed, "detail": obj.detail}
    if isinstance(obj, np.ndarray):
        return None  # arrays go to their own artifacts
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def write_report_csv(path: Path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for rep in reports:
            w.writerow({k: repr(float(v)) for k, v in rep.row().items()})


def _strip_reports(run: dict) -> dict:
    return {k: v for k, v in run.items() if k != "reports"} | {"n_reports": len(run.get("reports", []))}


def _levels(base, count: int | None) -> list[int]:
    base = list(base)
    if count is None:
        return base
    if count < 2:
        raise ConfigError("--levels needs at least 2 resolutions")
    out = base[:count]
    while len(out) < count:
        out.append(2 * (out[-1] - 1) + 1)
    return out


# -- subcommands -------------------------------------------------------------------

def cmd_check_tensor(cfg, args, out: Path):
    res = X.check_tensor(int(cfg["seed"]), null=args.null)
    (out / "tensor.json").write_text(tensor_to_json(res["tensor"]))
    return res["verdicts"], {k: v for k, v in res.items() if k not in ("tensor", "verdicts")}


def cmd_verify_commutators(cfg, args, out: Path):
    levels = _levels(cfg["commutators"]["levels"], args.levels)
    res = X.commutator_study(cfg, levels)
    for group in ("smooth", "exact"):
        for fam, table in res[group].items():
            for name, row in table.items():
                orders = ", ".join(f"{o:.3f}" for o in row["orders"])
                resid = ", ".join(f"{r:.3e}" for r in row["residuals"])
                print(f"{group:6s} {fam:11s} {name:9s} residuals [{resid}] orders [{orders}]"
                      f"{' exact' if row['exact'] else ''}")
    return res["verdicts"], {k: v for k, v in res.items() if k != "verdicts"}


def cmd_convergence(cfg, args, out: Path):
    levels = _levels(cfg["convergence"]["levels"], args.levels)
    conv = X.convergence_study(cfg, levels)
    phase = X.phase_speed_study(cfg)
    lin = X.linear_conservation(cfg)
    write_report_csv(out / "report.csv", lin["reports"])
    summary = {"convergence": conv, "phase": phase, "linear": _strip_reports(lin)}
    return conv["verdicts"] + phase["verdicts"] + lin["verdicts"], summary


def cmd_simulate(cfg, args, out: Path):
    rc = X.build_run(cfg)
    if rc.B is not None:
        (out / "tensor.json").write_text(tensor_to_json(rc.B))
    res = X.execute(rc, "simulate")
    write_report_csv(out / "report.csv", res["reports"])
    k = rc.k_report
    summary = _strip_reports(res)
    try:
        summary["slope"] = growth_exponent_fit([(r.t, r.E[k]) for r in res["reports"]])
    except FitError as exc:
        summary["slope"] = None
        summary["slope_note"] = str(exc)
    summary["E1_boundedness"] = boundedness_check([(r.t, r.E[1]) for r in res["reports"]])
    if res["aborted"]:
        print(f"run aborted: {res['abort_reason']}", file=sys.stderr)
    return [X.Verdict("run", not res["aborted"], res["abort_reason"] or f"{len(res['reports'])} reports")], summary


def cmd_theorem1(cfg, args, out: Path):
    res = X.theorem1_proxy(cfg)
    write_report_csv(out / "report.csv", res["runs"][-1]["reports"])
    for run in res["runs"]:
        write_report_csv(out / f"report_{run['points']}.csv", run["reports"])
    summary = {k: v for k, v in res.items() if k not in ("runs", "verdicts")}
    summary["runs"] = [_strip_reports(r) for r in res["runs"]]
    return res["verdicts"] + res["ratio_check"]["verdicts"], summary


def cmd_theorem2(cfg, args, out: Path):
    res = X.theorem2_proxy(cfg)
    for name, run in res["runs"].items():
        write_report_csv(out / f"report_{name}.csv", run["reports"])
    write_report_csv(out / "report.csv", res["runs"]["null"]["reports"])
    (out / "tensor.json").write_text(tensor_to_json(res["tensors"]["null"]))
    (out / "tensor_generic.json").write_text(tensor_to_json(res["tensors"]["generic"]))
    summary = {"ratio": res["ratio"], "runs": {k: _strip_reports(v) for k, v in res["runs"].items()}}
    return res["verdicts"], summary


HANDLERS = {
    "check-tensor": cmd_check_tensor,
    "verify-commutators": cmd_verify_commutators,
    "convergence": cmd_convergence,
    "simulate": cmd_simulate,
    "theorem1-proxy": cmd_theorem1,
    "theorem2-proxy": cmd_theorem2,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elastowave", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config (schema_version 1); defaults fill the rest")
        p.add_argument("--seed", type=int, help="seed for tensors and samplers")
        p.add_argument("--out", type=Path, default=Path("out"), help="artifact directory (default: out)")
        p.add_argument("--k", type=int, choices=(2, 3), help="energy order for reports")
        p.add_argument("--levels", type=int, help="number of refinement levels")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "check-tensor":
            p.add_argument("--null", action="store_true", help="project onto the null-condition subspace")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.k is not None:
        overrides["run"] = {"k": args.k}
    try:
        cfg = X.load_config(args.config, overrides)
        args.out.mkdir(parents=True, exist_ok=True)
        verdicts, summary = HANDLERS[args.command](cfg, args, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for v in verdicts:
        print(v.line())
    ok = all(v.passed for v in verdicts)
    payload = {"command": args.command, "seed": cfg["seed"], "pass": ok,
               "verdicts": verdicts, "results": summary, "config": cfg}
    (args.out / "summary.json").write_text(json.dumps(_jsonable(payload), indent=2))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
