"""Dependency-aware sequence search: BFS, BFS-Fast and RandomWalk.

The search keeps a set of valid rendered sequences of uniform length n
(initially the singleton empty sequence). Each iteration extends those
sequences by one request whose dependencies are satisfied, renders the new
last request every way the dictionary allows (capped), executes each
candidate front to back on a fresh connection, and keeps the renderings
whose final response was 2xx. Bug-class finals go to the bucket store;
nothing non-2xx is extended further unless feedback is disabled.

Strategies differ only in the extension step:

* BFS: every (sequence, template) pair with satisfied dependencies, in
  sequence-major, declaration-order-minor order.
* BFS-Fast: one extension per template — the first sequence that satisfies
  it — so the frontier stays at most |templates| wide while every
  satisfiable template still appears as a final request each iteration.
* RandomWalk: a single uniformly random satisfiable (sequence, template)
  draw. It ignores max_length, needs a time budget, and restarts from
  scratch (without memoizing) whenever the walk cannot be extended; a
  restart that makes no progress past the empty sequence ends the run.
"""

from __future__ import annotations

import enum
import logging
import random
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .buckets import BucketStore, BugInstance
from .executor import (
    DEFAULT_ERROR_STATUS_CLASSES,
    ExecutionResult,
    ResponseClass,
    SequenceExecutor,
    Transport,
    status_class_label,
    validate_status_patterns,
)
from .grammar import (
    DEFAULT_COMBINATION_CAP,
    FuzzingDictionary,
    GrammarProgram,
    RenderedRequest,
    RequestTemplate,
    ResourceType,
    consumes,
    produces,
    render_combinations,
)
from .telemetry import PerLengthRow, TelemetrySink

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


class Strategy(enum.Enum):
    BFS = "bfs"
    BFS_FAST = "bfs-fast"
    RANDOM_WALK = "random-walk"

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        normalized = text.strip().lower().replace("_", "-")
        for member in cls:
            if member.value == normalized:
                return member
        choices = ", ".join(m.value for m in cls)
        raise ConfigError(f"unknown strategy {text!r} (choose from: {choices})")


@dataclass(frozen=True)
class EngineConfig:
    strategy: Strategy = Strategy.BFS_FAST
    max_length: int = 3
    time_budget: float | None = None
    combination_cap: int = DEFAULT_COMBINATION_CAP
    error_status_classes: tuple[str, ...] = DEFAULT_ERROR_STATUS_CLASSES
    rng_seed: int = 0
    worker_count: int = 1
    no_deps: bool = False
    no_feedback: bool = False

    def validate(self) -> None:
        if self.max_length < 1:
            raise ConfigError("max_length must be >= 1")
        if self.worker_count < 1:
            raise ConfigError("worker_count must be >= 1")
        if self.combination_cap < 1:
            raise ConfigError("combination_cap must be >= 1")
        if self.time_budget is not None and self.time_budget <= 0:
            raise ConfigError("time_budget must be positive")
        if self.strategy is Strategy.RANDOM_WALK and self.time_budget is None:
            raise ConfigError("random-walk has no length bound; a time budget is required")
        try:
            validate_status_patterns(self.error_status_classes)
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "max_length": self.max_length,
            "time_budget": self.time_budget,
            "combination_cap": self.combination_cap,
            "error_status_classes": list(self.error_status_classes),
            "rng_seed": self.rng_seed,
            "worker_count": self.worker_count,
            "no_deps": self.no_deps,
            "no_feedback": self.no_feedback,
        }


@dataclass(frozen=True)
class SequenceStep:
    """One rendered step of a retained sequence."""

    template_id: str
    rendering_index: int


RenderedSteps = tuple[SequenceStep, ...]


@dataclass(frozen=True)
class CandidateExtension:
    """A validated prefix plus one not-yet-rendered template to append."""

    prefix: RenderedSteps
    template_id: str


def sequence_produces(
    steps: Iterable[SequenceStep], grammar: GrammarProgram
) -> frozenset[ResourceType]:
    produced: set[ResourceType] = set(grammar.external_values)
    for step in steps:
        produced |= produces(grammar.template_by_id(step.template_id))
    return frozenset(produced)


def dependencies_satisfied(
    steps: RenderedSteps, template: RequestTemplate, grammar: GrammarProgram
) -> bool:
    return consumes(template) <= sequence_produces(steps, grammar)


def extend(
    seq_set: Sequence[RenderedSteps],
    grammar: GrammarProgram,
    strategy: Strategy,
    rng: random.Random | None = None,
) -> list[CandidateExtension]:
    """One search iteration's worth of unrendered candidate sequences.

    An empty result means the search is exhausted at this length.
    """
    templates = grammar.templates
    if strategy is Strategy.BFS:
        return [
            CandidateExtension(steps, template.id)
            for steps in seq_set
            for template in templates
            if dependencies_satisfied(steps, template, grammar)
        ]
    if strategy is Strategy.BFS_FAST:
        out = []
        for template in templates:
            for steps in seq_set:
                if dependencies_satisfied(steps, template, grammar):
                    out.append(CandidateExtension(steps, template.id))
                    break
        return out
    if strategy is Strategy.RANDOM_WALK:
        if rng is None:
            raise ValueError("random-walk extension needs an rng")
        satisfiable = [
            (steps, template)
            for steps in seq_set
            for template in templates
            if dependencies_satisfied(steps, template, grammar)
        ]
        if not satisfiable:
            return []
        steps, template = rng.choice(satisfiable)
        return [CandidateExtension(steps, template.id)]
    raise ValueError(f"unhandled strategy {strategy}")


# ----------------------------------------------------------------------------
# Reports


@dataclass
class FuzzReport:
    strategy: str
    max_length_reached: int
    total_tests: int
    status_totals: dict[str, int]
    status_group_totals: dict[str, int]
    per_length: list[PerLengthRow]
    buckets: list[dict]
    restarts: int
    behaviors: list[tuple[str, str]]
    stopped_reason: str
    transport_failures: int
    elapsed_seconds: float

    @property
    def behavioral_coverage(self) -> int:
        return len(self.behaviors)

    def fingerprint(self) -> dict:
        """Everything reproducible about the run — no wall-clock times."""
        return {
            "strategy": self.strategy,
            "max_length_reached": self.max_length_reached,
            "total_tests": self.total_tests,
            "status_totals": dict(sorted(self.status_totals.items())),
            "status_group_totals": dict(sorted(self.status_group_totals.items())),
            "per_length": [
                [row.length, row.tests, row.seqset_size, row.dynamic_objects]
                for row in self.per_length
            ],
            "buckets": [
                {
                    "bucket_id": b["bucket_id"],
                    "defining_sequence": list(b["defining_sequence"]),
                    "instances": b["instances"],
                }
                for b in self.buckets
            ],
            "restarts": self.restarts,
            "behaviors": [list(pair) for pair in self.behaviors],
            "behavioral_coverage": self.behavioral_coverage,
            "stopped_reason": self.stopped_reason,
            "transport_failures": self.transport_failures,
        }

    def to_dict(self) -> dict:
        data = self.fingerprint()
        data["elapsed_seconds"] = round(self.elapsed_seconds, 3)
        return data


class _Budget:
    def __init__(self, seconds: float | None):
        self._deadline = None if seconds is None else time.monotonic() + seconds

    def expired(self) -> bool:
        return self._deadline is not None and time.monotonic() >= self._deadline


@dataclass
class _ValidationOutcome:
    retained: list[RenderedSteps]
    tests: int
    extracted: int
    stopped_early: bool


# ----------------------------------------------------------------------------
# Engine


class FuzzEngine:
    """Wires the search loop to executors, the bucket store and telemetry.

    ``transport_factory`` is called once per worker so each worker owns its
    own connection handling; with the default single worker everything runs
    inline and the whole campaign is deterministic against a deterministic
    target. With several workers the candidate list of each iteration is
    partitioned round-robin; retained sequences are merged back in candidate
    order, so the search frontier stays deterministic even though bucket
    discovery order may not.
    """

    def __init__(
        self,
        grammar: GrammarProgram,
        dictionary: FuzzingDictionary,
        config: EngineConfig,
        transport_factory: Callable[[], Transport],
        sink: TelemetrySink | None = None,
        bucket_store: BucketStore | None = None,
        probe: Callable[[], None] | None = None,
    ):
        config.validate()
        self.grammar = grammar.without_dependencies() if config.no_deps else grammar
        self.dictionary = dictionary
        self.config = config
        self.transport_factory = transport_factory
        self.sink = sink
        self.bucket_store = bucket_store if bucket_store is not None else BucketStore()
        self.probe = probe
        self.stop_requested = threading.Event()
        self._render_cache: dict[str, tuple[RenderedRequest, ...]] = {}
        self._test_counter = 0
        self._status_totals: Counter[str] = Counter()
        self._status_group_totals: Counter[str] = Counter()
        self._behaviors: set[tuple[str, str]] = set()
        self._transport_failures = 0
        self._stats_lock = threading.Lock()

    # -- helpers -----------------------------------------------------------

    def _renderings(self, template_id: str) -> tuple[RenderedRequest, ...]:
        cached = self._render_cache.get(template_id)
        if cached is None:
            template = self.grammar.template_by_id(template_id)
            cached = tuple(
                render_combinations(template, self.dictionary, self.config.combination_cap)
            )
            self._render_cache[template_id] = cached
        return cached

    def _rendered_request(self, step: SequenceStep) -> RenderedRequest:
        return self._renderings(step.template_id)[step.rendering_index]

    def _make_executor(self) -> SequenceExecutor:
        return SequenceExecutor(
            transport=self.transport_factory(),
            template_lookup=self.grammar.template_by_id,
            error_classes=self.config.error_status_classes,
            external_values={
                r: v for r, v in self.grammar.external_values.items()
            },
            sink=self.sink,
        )

    def _note_result(self, steps: RenderedSteps, result: ExecutionResult) -> None:
        with self._stats_lock:
            self._status_totals[result.final_class] += 1
            self._transport_failures += 1 if result.failure else 0
            for step, exchange in zip(steps, result.exchanges):
                label = status_class_label(exchange.status)
                self._status_group_totals[label] += 1
                self._behaviors.add((step.template_id, label))

    def _record_bug(self, steps: RenderedSteps, result: ExecutionResult) -> None:
        executed = steps[: len(result.exchanges)]
        instance = BugInstance(
            steps=tuple((s.template_id, s.rendering_index) for s in executed),
            requests=tuple(ex.request for ex in result.exchanges),
            responses=tuple(ex.response_head() + ex.body for ex in result.exchanges),
            final_status=result.exchanges[-1].status,
            found_at=time.time(),
        )
        bucket, created = self.bucket_store.record(instance)
        logger.info(
            "bug (status %d) filed under bucket %s%s: %s",
            instance.final_status,
            bucket.bucket_id,
            " [new]" if created else "",
            " -> ".join(instance.template_ids),
        )
        if self.sink is not None:
            self.sink.record_bucket(bucket.bucket_id, bucket.defining_sequence, created)

    # -- validation --------------------------------------------------------

    def _execute_candidates(
        self,
        candidates: Sequence[CandidateExtension],
        executors: Sequence[SequenceExecutor],
        budget: _Budget,
    ) -> _ValidationOutcome:
        """Render and run every candidate, preserving candidate order.

        Test indices are assigned up front from the rendering counts, so
        they are stable no matter how many workers execute the partitions.
        """
        plans = []  # (candidate_index, first_test_index, renderings)
        next_index = self._test_counter
        for position, candidate in enumerate(candidates):
            renderings = self._renderings(candidate.template_id)
            plans.append((position, next_index, renderings))
            next_index += len(renderings)

        retained_per_candidate: dict[int, list[RenderedSteps]] = {}
        tests_per_candidate: dict[int, int] = {}
        extracted_per_candidate: dict[int, int] = {}
        stop_flag = threading.Event()

        def run_partition(worker_id: int) -> None:
            executor = executors[worker_id]
            for position, first_index, renderings in plans[worker_id :: len(executors)]:
                candidate = candidates[position]
                retained: list[RenderedSteps] = []
                tests = 0
                extracted = 0
                for offset, last_rendering in enumerate(renderings):
                    if stop_flag.is_set():
                        break
                    if budget.expired() or self.stop_requested.is_set():
                        stop_flag.set()
                        break
                    steps = candidate.prefix + (
                        SequenceStep(candidate.template_id, last_rendering.rendering_index),
                    )
                    rendered = [self._rendered_request(s) for s in steps]
                    result = executor.execute_sequence(rendered, test_index=first_index + offset)
                    tests += 1
                    self._note_result(steps, result)
                    extracted += result.extracted
                    if result.final_class == ResponseClass.BUG:
                        self._record_bug(steps, result)
                    if result.final_class == ResponseClass.VALID or self.config.no_feedback:
                        retained.append(steps)
                    elif result.exchanges:
                        logger.debug(
                            "dropped %s (final status %d)",
                            " -> ".join(s.template_id for s in steps),
                            result.exchanges[-1].status,
                        )
                retained_per_candidate[position] = retained
                tests_per_candidate[position] = tests
                extracted_per_candidate[position] = extracted
                if stop_flag.is_set():
                    break

        if len(executors) == 1:
            run_partition(0)
        else:
            threads = [
                threading.Thread(target=run_partition, args=(i,), daemon=True)
                for i in range(len(executors))
            ]
            for thread in threads:
                thread.start()
            for thread in threads:
                thread.join()

        merged: list[RenderedSteps] = []
        seen: set[RenderedSteps] = set()
        tests = 0
        extracted = 0
        for position in range(len(candidates)):
            tests += tests_per_candidate.get(position, 0)
            extracted += extracted_per_candidate.get(position, 0)
            for steps in retained_per_candidate.get(position, []):
                if steps not in seen:  # uniqueness by (template, rendering) ids
                    seen.add(steps)
                    merged.append(steps)
        self._test_counter += tests
        return _ValidationOutcome(
            retained=merged,
            tests=tests,
            extracted=extracted,
            stopped_early=stop_flag.is_set(),
        )

    # -- main loop ---------------------------------------------------------

    def run(self) -> FuzzReport:
        started = time.monotonic()
        if self.probe is not None:
            self.probe()
        if self.sink is not None:
            self.sink.record_run_start(self.config.to_dict())

        executors = [self._make_executor() for _ in range(self.config.worker_count)]
        budget = _Budget(self.config.time_budget)
        rng = random.Random(self.config.rng_seed)

        per_length: dict[int, list[int]] = {}  # length -> [tests, seqset, objects]
        seq_set: list[RenderedSteps] = [()]
        length = 0
        max_reached = 0
        restarts = 0
        progressed_since_restart = False
        stopped_reason = "exhausted"
        is_walk = self.config.strategy is Strategy.RANDOM_WALK

        while True:
            if budget.expired() or self.stop_requested.is_set():
                stopped_reason = "time_budget" if not self.stop_requested.is_set() else "interrupted"
                break
            if not is_walk and length >= self.config.max_length:
                stopped_reason = "max_length"
                break

            candidates = extend(seq_set, self.grammar, self.config.strategy, rng)
            if not candidates:
                if is_walk:
                    if not progressed_since_restart:
                        stopped_reason = "exhausted"
                        break
                    restarts += 1
                    progressed_since_restart = False
                    seq_set = [()]
                    length = 0
                    continue
                stopped_reason = "exhausted"
                break

            outcome = self._execute_candidates(candidates, executors, budget)
            length += 1
            row = per_length.setdefault(length, [0, 0, 0])
            row[0] += outcome.tests
            row[1] = len(outcome.retained)
            row[2] += outcome.extracted
            if self.sink is not None:
                self.sink.record_length_stats(
                    PerLengthRow(
                        length=length,
                        tests=row[0],
                        seqset_size=row[1],
                        dynamic_objects=row[2],
                    )
                )
            seq_set = outcome.retained
            if seq_set:
                max_reached = max(max_reached, length)
                progressed_since_restart = True
            if outcome.stopped_early:
                stopped_reason = (
                    "interrupted" if self.stop_requested.is_set() else "time_budget"
                )
                break

        elapsed = time.monotonic() - started
        buckets = [
            {
                "bucket_id": bucket.bucket_id,
                "defining_sequence": list(bucket.defining_sequence),
                "instances": len(bucket.instances),
            }
            for bucket in self.bucket_store.buckets()
        ]
        report = FuzzReport(
            strategy=self.config.strategy.value,
            max_length_reached=max_reached,
            total_tests=self._test_counter,
            status_totals=dict(self._status_totals),
            status_group_totals=dict(self._status_group_totals),
            per_length=[
                PerLengthRow(length=n, tests=v[0], seqset_size=v[1], dynamic_objects=v[2])
                for n, v in sorted(per_length.items())
            ],
            buckets=buckets,
            restarts=restarts,
            behaviors=sorted(self._behaviors),
            stopped_reason=stopped_reason,
            transport_failures=self._transport_failures,
            elapsed_seconds=elapsed,
        )
        if self.sink is not None:
            self.sink.record_run_end(stopped_reason, report.to_dict())
        return report
