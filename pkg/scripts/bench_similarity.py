#!/usr/bin/env python3
"""Micro-benchmark for the similarity scoring hot path.

Scores blocks of random queries against a pre-normalized pattern bank and
reports evaluations per second. One evaluation is one query-pattern pair.
"""

import argparse

from lstrader.regression import benchmark_similarity


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--queries", type=int, default=1024)
    parser.add_argument("--patterns", type=int, default=2048)
    parser.add_argument("--dim", type=int, default=360)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    rate = benchmark_similarity(
        num_queries=args.queries,
        num_patterns=args.patterns,
        dim=args.dim,
        seed=args.seed,
        repeats=args.repeats,
    )
    total = args.queries * args.patterns
    print(
        f"{total:,} similarity evaluations at M={args.dim}: "
        f"{rate:,.0f} evaluations/sec ({rate / 1e6:.1f}M/s)"
    )


if __name__ == "__main__":
    main()
