"""Sweep feedback hyperparameters for one configuration on the fixture corpus.

Evaluates every (feedback docs, expansion terms) cell, writes the
surface CSV, and prints the best cell.

    python3 scripts/sweep_fixture_grid.py --out /tmp/fixture_grid --experiment Fiction_RLM
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from chronosearch.harness import run_grid

from run_fixture_benchmark import FIXTURES, build_fixture_indexes


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--experiment",
        default="Fiction_RLM",
        choices=["NonFiction_RLM", "Fiction_RLM", "FictionNonFiction_RLM"],
    )
    parser.add_argument("--objective", default="MAP")
    parser.add_argument("--depth", type=int, default=50)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    out_dir = Path(args.out)
    index_dirs = build_fixture_indexes(out_dir)
    # The fixture corpus has few distinct terms, so cap the grid well
    # below the full 110 cells to keep the sweep readable.
    result = run_grid(
        args.experiment,
        index_dirs,
        FIXTURES / "topics.jsonl",
        FIXTURES / "qrels.txt",
        depth=args.depth,
        docs_grid=[5, 10, 20],
        terms_grid=[4, 8, 16],
        objective=args.objective,
        workers=args.workers,
    )
    csv_path = out_dir / f"grid_{args.experiment}.csv"
    csv_path.write_text(result.to_csv(), encoding="utf-8")
    best = result.best
    if best is None:
        print("every cell failed", file=sys.stderr)
        return 1
    print(
        f"best {args.objective}={best.metrics[args.objective]:.4f} "
        f"at M={best.feedback_docs} T={best.expansion_terms}"
    )
    for cell in result.cells:
        if cell.error is not None:
            print(
                f"failed cell M={cell.feedback_docs} T={cell.expansion_terms}: {cell.error}",
                file=sys.stderr,
            )
    print(f"surface written to {csv_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
