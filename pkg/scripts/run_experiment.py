#!/usr/bin/env python3
"""Desk-scale end-to-end experiment.

Reproduces the whole pipeline on the copy task with the noisy scripted
predictor: confidence-trajectory similarity, the full hyperparameter grid,
and a static-vs-dynamic comparison with Pareto extraction. Writes all
report files under --out and prints a summary table.
"""

import argparse
from pathlib import Path

from mdm_sched.analysis import (
    pairwise_similarity,
    trajectory_from_trace,
    write_similarity_csv,
    write_trajectories_jsonl,
)
from mdm_sched.harness import (
    FULL_SWEEP_GRID,
    DatasetItem,
    build_predictor,
    compare,
    sweep,
    write_compare_outputs,
    write_sweep_outputs,
)
from mdm_sched.strategies import PRESETS, DecodePolicy, decode_fixed_quota
from mdm_sched.toytasks import make_copy_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description="Run the full desk-scale experiment")
    parser.add_argument("--n", type=int, default=20)
    parser.add_argument("--gen-len", type=int, default=128)
    parser.add_argument("--block-len", type=int, default=16)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="experiment-out")
    parser.add_argument("--full-grid", action="store_true", help="sweep all 250 configurations")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = make_copy_dataset(args.n, prompt_len=16, gen_len=args.gen_len, seed=args.seed)
    items = [DatasetItem(r["id"], tuple(r["prompt"]), tuple(r["reference"])) for r in rows]
    predictor = build_predictor("noisy", items, seed=args.seed)

    # 1. Confidence signature: aligned trajectories from the fixed-quota decoder.
    vectors = []
    for item in items:
        outcome = decode_fixed_quota(
            item.prompt, predictor, quota=1, gen_len=args.gen_len,
            block_len=args.block_len, prompt_id=item.id,
        )
        vectors.append(trajectory_from_trace(outcome.trace))
    matrix = pairwise_similarity(vectors)
    write_trajectories_jsonl(vectors, out / "trajectories.jsonl")
    write_similarity_csv(matrix, out / "similarity.csv")
    print(f"confidence signature: min pairwise cosine {matrix.min_off_diagonal():.6f}")

    # 2. Hyperparameter grid.
    grid = FULL_SWEEP_GRID
    if not args.full_grid:
        grid = type(grid)(
            modes=grid.modes, metrics=("q1", "q2"), caps=(0.75, 0.85, 0.95), slacks=(0.05, 0.2)
        )
    reports = sweep(items, predictor, grid, args.gen_len, args.block_len, seed=args.seed)
    write_sweep_outputs(reports, out)
    ok = [r for r in reports if r.metrics is not None]
    best = max(ok, key=lambda r: (r.metrics.accuracy, r.metrics.tokens_per_call))
    print(f"sweep: {len(ok)}/{len(reports)} configs, best {best.label} "
          f"(acc {best.metrics.accuracy:.3f}, {best.metrics.tokens_per_call:.2f} tok/call)")

    # 3. Baselines vs presets.
    policies = [
        ("quota-1", DecodePolicy(strategy="fixed_quota", quota=1)),
        ("static-0.9", DecodePolicy(strategy="static", tau_static=0.9)),
        ("osdt-gsm8k", PRESETS["gsm8k"]),
        ("osdt-humaneval", PRESETS["humaneval"]),
        ("osdt-gpqa", PRESETS["gpqa"]),
    ]
    cmp_reports, frontier = compare(items, predictor, policies, args.gen_len, args.block_len)
    write_compare_outputs(cmp_reports, frontier, out)
    print(f"{'policy':<16} {'accuracy':>8} {'tok/call':>9} {'calls':>6}")
    frontier_labels = {p.label for p in frontier}
    for r in cmp_reports:
        star = "*" if r.label in frontier_labels else " "
        print(f"{star}{r.label:<15} {r.metrics.accuracy:>8.3f} "
              f"{r.metrics.tokens_per_call:>9.2f} {r.metrics.predictor_calls:>6}")
    print(f"(* = on the accuracy/tokens-per-call frontier; files in {out}/)")


if __name__ == "__main__":
    main()
