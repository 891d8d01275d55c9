#!/usr/bin/env python3
"""Run the three algorithm variants against the reference service.

Variants: the full algorithm, dependency inference disabled (consumed
values degrade to dictionary strings), and feedback pruning disabled
(invalid sequences stay in the frontier). The full variant should find the
planted bug with far fewer tests than no-feedback, while no-deps finds
nothing at all.
"""

from __future__ import annotations

import argparse
import sys

from restfuzz.blogserver import bundled_spec_path, running
from restfuzz.compiler import compile_grammar, parse_spec
from restfuzz.engine import EngineConfig, FuzzEngine, Strategy
from restfuzz.executor import ConnectionConfig, SocketTransport
from restfuzz.grammar import FuzzingDictionary

VARIANTS = [
    ("full", {}),
    ("no-deps", {"no_deps": True}),
    ("no-feedback", {"no_feedback": True}),
]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--max-length", type=int, default=3)
    parser.add_argument("--strategy", default="bfs")
    args = parser.parse_args(argv)
    strategy = Strategy.parse(args.strategy)

    print(f"{'variant':<12} {'tests':>7} {'valid':>7} {'invalid':>8} {'bugs':>6} {'buckets':>8}")
    for name, flags in VARIANTS:
        with running() as handle:
            host = f"127.0.0.1:{handle.port}"
            grammar = compile_grammar(parse_spec(bundled_spec_path().read_text()), host=host)
            conn = ConnectionConfig("127.0.0.1", handle.port)
            config = EngineConfig(strategy=strategy, max_length=args.max_length, **flags)
            engine = FuzzEngine(
                grammar,
                FuzzingDictionary.default(),
                config,
                transport_factory=lambda: SocketTransport(conn),
            )
            report = engine.run()
        totals = report.status_totals
        print(
            f"{name:<12} {report.total_tests:>7} {totals.get('valid', 0):>7} "
            f"{totals.get('invalid', 0):>8} {totals.get('bug', 0):>6} {len(report.buckets):>8}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
