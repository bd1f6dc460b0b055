"""Batch experiment front end.

Subcommands:
    run      one variant of a scenario, N trials -> episode logs, summary,
             plot-ready series
    compare  the filter-driven controller against the per-frame baseline on
             identical seeds -> side-by-side table

All outputs are plain text with fully deterministic content: running the
same invocation twice produces byte-identical trees at any parallelism.
Set EKFSERVO_LOG=debug|info|warning to control log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_scenario
from .lie import Pose, rotation_to_quaternion
from .metrics import Summary, te_re
from .simulator import (
    EpisodeRecord,
    InfeasibleScenario,
    Scenario,
    geodesic_reference_for,
    run_batch,
)

logger = logging.getLogger(__name__)

EPISODE_HEADER = (
    "frame,gt_qw,gt_qx,gt_qy,gt_qz,gt_tx,gt_ty,gt_tz,"
    "est_qw,est_qx,est_qy,est_qz,est_tx,est_ty,est_tz,"
    "cmd_vx,cmd_vy,cmd_vz,cmd_wx,cmd_wy,cmd_wz,entropy,resid_rms"
)
SUMMARY_HEADER = (
    "variant,trials,successes,failures,sr_percent,te_mm_mean,te_mm_std,"
    "re_deg_mean,re_deg_std,lr_mean,lr_std,correlation_r,nees_mean"
)


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_compare(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleScenario as exc:
        print(f"error: infeasible scenario: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ekfservo",
        description="Closed-loop visual servoing batches and comparisons")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--trials", type=int, default=30)
        p.add_argument("--seed", type=int, default=None,
                       help="base seed (default: scenario file seed)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--parallelism", type=int, default=1)
        p.add_argument("--no-uncertainty-policy", action="store_true",
                       help="disable the entropy-gated velocity reduction")

    p_run = sub.add_parser("run", help="run one controller variant")
    common(p_run)
    p_run.add_argument("--variant",
                       choices=("coupled-ekf", "pbvs-perframe", "none"),
                       default=None,
                       help="controller variant (default: scenario file)")

    p_cmp = sub.add_parser("compare",
                           help="coupled-ekf vs pbvs-perframe on same seeds")
    common(p_cmp)
    return parser


def _prepare_scenario(args, variant=None) -> Scenario:
    scenario = load_scenario(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if variant is not None:
        updates["variant"] = variant
    elif getattr(args, "variant", None):
        updates["variant"] = args.variant
    if args.no_uncertainty_policy:
        updates["uncertainty_policy"] = False
    return replace(scenario, **updates) if updates else scenario


def _cmd_run(args) -> int:
    if args.trials < 0:
        print("error: --trials must be >= 0", file=sys.stderr)
        return 2
    scenario = _prepare_scenario(args)
    out = Path(args.out)
    result = run_batch(scenario, args.trials, args.parallelism)
    _write_run_outputs(out, scenario, result.records, result.summary, args)
    logger.info("wrote %d episodes to %s", len(result.records), out)
    return 0


def _cmd_compare(args) -> int:
    if args.trials < 0:
        print("error: --trials must be >= 0", file=sys.stderr)
        return 2
    out = Path(args.out)
    summaries = {}
    for variant in ("coupled-ekf", "pbvs-perframe"):
        scenario = _prepare_scenario(args, variant=variant)
        result = run_batch(scenario, args.trials, args.parallelism)
        _write_run_outputs(out / variant, scenario, result.records,
                           result.summary, args)
        summaries[variant] = result.summary
    _write_json(out / "comparison.json",
                {v: s.to_dict() for v, s in summaries.items()})
    lines = [SUMMARY_HEADER]
    for variant in ("coupled-ekf", "pbvs-perframe"):
        lines.append(_summary_row(summaries[variant]))
    _write_text(out / "comparison.csv", "\n".join(lines) + "\n")
    return 0


def _write_run_outputs(out: Path, scenario: Scenario, records, summary: Summary,
                       args) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "episodes").mkdir(exist_ok=True)
    for i, rec in enumerate(records):
        _write_text(out / "episodes" / f"episode_{i:04d}.csv",
                    _episode_csv(rec))
    payload = {
        "summary": summary.to_dict(),
        "invocation": {
            "config": str(args.config),
            "trials": args.trials,
            "base_seed": scenario.seed,
            "variant": scenario.variant,
            "uncertainty_policy": scenario.uncertainty_policy,
        },
    }
    _write_json(out / "summary.json", payload)
    _write_text(out / "summary.csv",
                SUMMARY_HEADER + "\n" + _summary_row(summary) + "\n")
    if records:
        _write_series(out, records[0])


def _episode_csv(rec: EpisodeRecord) -> str:
    lines = [EPISODE_HEADER]
    for k in range(rec.frames):
        gt_q = rotation_to_quaternion(rec.gt_C[k])
        est_q = rotation_to_quaternion(rec.est_C[k])
        fields = ([str(k)]
                  + [_fmt(x) for x in gt_q] + [_fmt(x) for x in rec.gt_t[k]]
                  + [_fmt(x) for x in est_q] + [_fmt(x) for x in rec.est_t[k]]
                  + [_fmt(x) for x in rec.cmd[k]]
                  + [_fmt(rec.entropy[k]), _fmt(rec.resid_rms[k])])
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def _write_series(out: Path, rec: EpisodeRecord) -> None:
    lines = ["frame,te_mm,re_deg"]
    for k in range(rec.frames):
        te, re = te_re(Pose(rec.gt_C[k], rec.gt_t[k]), rec.desired)
        lines.append(f"{k},{_fmt(te)},{_fmt(re)}")
    _write_text(out / "series_pose_error.csv", "\n".join(lines) + "\n")

    lines = ["frame,cmd_vx,cmd_vy,cmd_vz,cmd_wx,cmd_wy,cmd_wz,entropy"]
    for k in range(rec.frames):
        vals = [_fmt(x) for x in rec.cmd[k]] + [_fmt(rec.entropy[k])]
        lines.append(f"{k}," + ",".join(vals))
    _write_text(out / "series_velocity.csv", "\n".join(lines) + "\n")

    lines = ["path,frame,x,y,z"]
    for k, p in enumerate(rec.camera_positions()):
        lines.append(f"actual,{k},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])}")
    for k, p in enumerate(geodesic_reference_for(rec)):
        lines.append(f"geodesic,{k},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])}")
    _write_text(out / "series_trajectory.csv", "\n".join(lines) + "\n")


def _summary_row(s: Summary) -> str:
    vals = [s.variant, str(s.trials), str(s.successes), str(s.failures),
            _fmt(s.sr_percent)]
    for v in (s.te_mm_mean, s.te_mm_std, s.re_deg_mean, s.re_deg_std,
              s.lr_mean, s.lr_std, s.correlation_r, s.nees_mean):
        vals.append(_fmt(float("nan") if v is None else v))
    return ",".join(vals)


def _fmt(x) -> str:
    """Shortest round-trip decimal form; deterministic across runs."""
    return repr(float(x))


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _setup_logging() -> None:
    level = os.environ.get("EKFSERVO_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s",
                        force=True)


if __name__ == "__main__":
    sys.exit(main())
