#!/usr/bin/env python3
"""Race BFS against RandomWalk under the same time budget.

BFS spends its budget widening shallow levels; RandomWalk dives. With the
bundled reference service and a short budget, RandomWalk should reach
sequence lengths BFS never gets near, at the cost of restarts and redundant
work. Prints one row per strategy.
"""

from __future__ import annotations

import argparse
import sys

from restfuzz.blogserver import bundled_spec_path, running
from restfuzz.compiler import compile_grammar, parse_spec
from restfuzz.engine import EngineConfig, FuzzEngine, Strategy
from restfuzz.executor import ConnectionConfig, SocketTransport
from restfuzz.grammar import FuzzingDictionary


def run_one(strategy: Strategy, port: int, budget: float, max_length: int, seed: int):
    host = f"127.0.0.1:{port}"
    grammar = compile_grammar(parse_spec(bundled_spec_path().read_text()), host=host)
    conn = ConnectionConfig("127.0.0.1", port)
    config = EngineConfig(
        strategy=strategy,
        max_length=max_length,
        time_budget=budget,
        rng_seed=seed,
    )
    engine = FuzzEngine(
        grammar,
        FuzzingDictionary.default(),
        config,
        transport_factory=lambda: SocketTransport(conn),
    )
    return engine.run()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--budget", type=float, default=5.0, help="seconds per strategy")
    parser.add_argument("--max-length", type=int, default=4, help="BFS length bound")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rows = []
    for strategy in (Strategy.BFS, Strategy.RANDOM_WALK):
        with running() as handle:  # fresh service per strategy: identical start state
            report = run_one(strategy, handle.port, args.budget, args.max_length, args.seed)
        rows.append(report)

    print(f"{'strategy':<12} {'tests':>7} {'max len':>8} {'restarts':>9} {'buckets':>8} {'stopped':>12}")
    for report in rows:
        print(
            f"{report.strategy:<12} {report.total_tests:>7} {report.max_length_reached:>8} "
            f"{report.restarts:>9} {len(report.buckets):>8} {report.stopped_reason:>12}"
        )
    bfs, walk = rows
    print()
    print(
        f"depth: random-walk reached {walk.max_length_reached}, "
        f"bfs reached {bfs.max_length_reached} (bound {args.max_length}) "
        f"in {args.budget:.1f}s each"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
