"""Command-line entry point.

Subcommands: run, calibrate, sweep, analyze, compare. The seed falls back
to the MDM_SCHED_SEED environment variable when --seed is not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .analysis import pairwise_similarity, trajectory_from_trace, write_similarity_csv, write_trajectories_jsonl
from .errors import EngineError
from .harness import (
    FULL_SWEEP_GRID,
    build_predictor,
    compare,
    execute_policy,
    grid_from_json,
    load_dataset,
    policy_from_json,
    sweep,
    write_compare_outputs,
    write_run_outputs,
    write_sweep_outputs,
)
from .strategies import (
    DEFAULT_CALIBRATION_TAU,
    DecodePolicy,
    DecodeTrace,
    METRICS,
    MODES,
    TraceStep,
    calibrate,
    profile_from_json,
    profile_to_json,
    static_threshold_generate,
)

STRATEGY_ALIASES = {"fixed": "fixed_quota", "static": "static", "osdt": "osdt"}


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("MDM_SCHED_SEED")
    return int(env) if env else 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", required=True, help="JSONL dataset file")
    parser.add_argument(
        "--predictor", default="scripted", choices=["scripted", "noisy", "bigram", "extern"]
    )
    parser.add_argument("--extern-cmd", default=None, help="command line for --predictor extern")
    parser.add_argument("--gen-len", type=int, default=256)
    parser.add_argument("--block-len", type=int, default=32)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--record-scope", default="accepted", choices=["accepted", "all-masked"])
    parser.add_argument("--jitter", type=float, default=None, help="override scripted jitter scale")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdm-sched",
        description="Decoding-policy engine for block-wise masked diffusion LM inference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="decode a dataset with one strategy")
    _add_common(run)
    run.add_argument("--strategy", default="static", choices=list(STRATEGY_ALIASES))
    run.add_argument("--quota", type=int, default=1, help="positions per step (fixed strategy)")
    run.add_argument("--tau", type=float, default=0.9, help="static threshold")
    run.add_argument("--mode", default="block", choices=list(MODES))
    run.add_argument("--metric", default="q1", choices=list(METRICS))
    run.add_argument("--cap", type=float, default=1.0)
    run.add_argument("--slack", type=float, default=0.0)
    run.add_argument("--calib-tau", type=float, default=DEFAULT_CALIBRATION_TAU)
    run.add_argument("--profile", default=None, help="use a saved threshold profile (skips calibration)")
    run.add_argument("--label", default=None, help="report label (defaults to the strategy)")

    cal = sub.add_parser("calibrate", help="run calibration only and save the profile")
    _add_common(cal)
    cal.add_argument("--mode", default="block", choices=list(MODES))
    cal.add_argument("--metric", default="q1", choices=list(METRICS))
    cal.add_argument("--calib-tau", type=float, default=DEFAULT_CALIBRATION_TAU)

    sw = sub.add_parser("sweep", help="grid search over OSDT hyperparameters")
    _add_common(sw)
    sw.add_argument("--grid", default=None, help="grid JSON file (default: the full reference grid)")
    sw.add_argument("--calib-tau", type=float, default=DEFAULT_CALIBRATION_TAU)

    an = sub.add_parser("analyze", help="trajectories + cosine matrix from saved traces")
    an.add_argument("--traces", required=True, help="directory containing trace JSONL files")
    an.add_argument("--out", default=None, help="output directory (default: the traces directory)")

    cmp_ = sub.add_parser("compare", help="run several policies and extract the Pareto frontier")
    _add_common(cmp_)
    cmp_.add_argument("--policies", required=True, help="JSON list of labeled policies")
    cmp_.add_argument(
        "--frontier-metric",
        default="tokens_per_call",
        choices=["tokens_per_call", "tokens_per_second"],
    )
    return parser


def _policy_from_args(args: argparse.Namespace) -> DecodePolicy:
    return DecodePolicy(
        strategy=STRATEGY_ALIASES[args.strategy],
        mode=args.mode,
        metric=args.metric,
        cap=args.cap,
        slack=args.slack,
        tau_static=args.tau,
        quota=args.quota,
        calibration_tau=args.calib_tau,
        record_scope=args.record_scope,
    )


def _load_inputs(args: argparse.Namespace):
    items = load_dataset(args.dataset)
    seed = _resolve_seed(args.seed)
    predictor = build_predictor(
        args.predictor, items, seed=seed, jitter=args.jitter, extern_cmd=args.extern_cmd
    )
    return items, predictor, seed


def _cmd_run(args: argparse.Namespace) -> int:
    items, predictor, seed = _load_inputs(args)
    try:
        policy = _policy_from_args(args)
        profile = None
        if args.profile:
            with open(args.profile, encoding="utf-8") as fh:
                profile = profile_from_json(json.load(fh))
        report = execute_policy(
            items, predictor, policy, args.gen_len, args.block_len,
            label=args.label or args.strategy, seed=seed, profile=profile,
        )
    finally:
        predictor.close()
    write_run_outputs(report, args.out)
    m = report.metrics
    print(
        f"{report.label}: accuracy={m.accuracy:.4f} predictor_calls={m.predictor_calls} "
        f"tokens_per_call={m.tokens_per_call:.3f} tokens_per_second={m.tokens_per_second:.1f}"
    )
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    items, predictor, seed = _load_inputs(args)
    first = items[0]
    try:
        _, _, records = static_threshold_generate(
            first.prompt, predictor, args.calib_tau, args.gen_len, args.block_len,
            record_scope=args.record_scope, prompt_id=first.id, phase="calibration",
        )
    finally:
        predictor.close()
    profile = calibrate(records, args.mode, args.metric, args.gen_len // args.block_len)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "profile.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(profile_to_json(profile), fh, indent=2)
        fh.write("\n")
    print(f"calibrated {args.mode}/{args.metric} profile from {first.id!r} -> {path}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    items, predictor, seed = _load_inputs(args)
    grid = FULL_SWEEP_GRID
    if args.grid:
        with open(args.grid, encoding="utf-8") as fh:
            grid = grid_from_json(json.load(fh))
    try:
        reports = sweep(
            items, predictor, grid, args.gen_len, args.block_len,
            calibration_tau=args.calib_tau, record_scope=args.record_scope, seed=seed,
        )
    finally:
        predictor.close()
    write_sweep_outputs(reports, args.out)
    failures = sum(1 for r in reports if r.error is not None)
    print(f"swept {len(reports)} configurations ({failures} failed) -> {args.out}")
    return 0


def _trace_from_json(obj: dict) -> DecodeTrace:
    steps = [
        TraceStep(
            block=s["block"],
            step=s["step"],
            tau_eff=s.get("tau_eff"),
            positions=tuple(s["positions"]),
            tokens=tuple(s["tokens"]),
            fallback_used=bool(s.get("fallback", False)),
            masked_count=int(s["masked_count"]),
            mean_confidence=float(s["mean_conf"]),
        )
        for s in obj["steps"]
    ]
    return DecodeTrace(
        prompt_id=str(obj["prompt"]),
        phase=str(obj.get("phase", "")),
        steps=steps,
        predictor_calls=int(obj["predictor_calls"]),
        generated_tokens=int(obj["generated_tokens"]),
        wall_time=float(obj["wall_time"]),
    )


def _cmd_analyze(args: argparse.Namespace) -> int:
    traces_dir = Path(args.traces)
    out = Path(args.out) if args.out else traces_dir
    out.mkdir(parents=True, exist_ok=True)
    traces: list[DecodeTrace] = []
    for path in sorted(traces_dir.glob("*.jsonl")):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                if "steps" in obj:
                    traces.append(_trace_from_json(obj))
    if not traces:
        raise EngineError("EMPTY_RECORDS", f"no trace lines under {traces_dir}")
    vectors = [trajectory_from_trace(t) for t in traces]
    write_trajectories_jsonl(vectors, out / "trajectories.jsonl")
    lengths = {len(v.values) for v in vectors}
    if len(vectors) >= 2 and len(lengths) == 1:
        matrix = pairwise_similarity(vectors)
        write_similarity_csv(matrix, out / "similarity.csv")
        print(
            f"analyzed {len(vectors)} traces: min off-diagonal cosine "
            f"{matrix.min_off_diagonal():.6f} -> {out}"
        )
    else:
        print(
            f"analyzed {len(vectors)} traces: ragged trajectories "
            f"(lengths {sorted(lengths)}), cosine matrix skipped -> {out}"
        )
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    items, predictor, seed = _load_inputs(args)
    with open(args.policies, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise EngineError("INVALID_POLICY", "--policies must be a JSON list")
    labeled = []
    for i, obj in enumerate(raw):
        obj = dict(obj)
        obj["strategy"] = STRATEGY_ALIASES.get(obj.get("strategy"), obj.get("strategy"))
        labeled.append((str(obj.pop("label", f"policy-{i}")), policy_from_json(obj)))
    try:
        reports, frontier = compare(
            items, predictor, labeled, args.gen_len, args.block_len,
            seed=seed, frontier_metric=args.frontier_metric,
        )
    finally:
        predictor.close()
    write_compare_outputs(reports, frontier, args.out)
    for r in reports:
        mark = "*" if any(p.label == r.label for p in frontier) else " "
        print(
            f"{mark} {r.label}: accuracy={r.metrics.accuracy:.4f} "
            f"tokens_per_call={r.metrics.tokens_per_call:.3f}"
        )
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "calibrate": _cmd_calibrate,
    "sweep": _cmd_sweep,
    "analyze": _cmd_analyze,
    "compare": _cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
