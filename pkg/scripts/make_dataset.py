#!/usr/bin/env python3
"""Generate the toy JSONL datasets (copy task / cycle task)."""

import argparse

from mdm_sched.harness import save_dataset
from mdm_sched.toytasks import make_copy_dataset, make_cycle_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description="Emit a toy dataset as JSONL")
    parser.add_argument("--task", choices=["copy", "cycle"], default="copy")
    parser.add_argument("--n", type=int, default=50)
    parser.add_argument("--prompt-len", type=int, default=16)
    parser.add_argument("--gen-len", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="dataset.jsonl")
    args = parser.parse_args()

    if args.task == "copy":
        rows = make_copy_dataset(args.n, args.prompt_len, args.gen_len, args.seed)
    else:
        rows = make_cycle_dataset(args.n, args.prompt_len, args.gen_len, args.seed)
    save_dataset(rows, args.out)
    print(f"wrote {len(rows)} {args.task}-task items -> {args.out}")


if __name__ == "__main__":
    main()
