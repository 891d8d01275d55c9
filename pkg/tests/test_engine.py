"""Search-engine tests.

Strategy semantics are pinned three ways: worked examples on the blog
grammar, a hypothesis property over randomly generated abstract grammars
(BFS-Fast must cover exactly the satisfiable templates, once each, with the
first satisfying prefix), and full campaigns against the live service whose
counts were frozen from hand-simulated runs.
"""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from restfuzz.blogserver import serve
from restfuzz.compiler import compile_grammar
from restfuzz.engine import (
    ConfigError,
    EngineConfig,
    FuzzEngine,
    SequenceStep,
    Strategy,
    dependencies_satisfied,
    extend,
    sequence_produces,
)
from restfuzz.executor import ConnectionConfig, SocketTransport
from restfuzz.grammar import (
    ConsumerSlot,
    FuzzingDictionary,
    GrammarProgram,
    ProducerSpec,
    RequestTemplate,
    ResourceType,
    StaticSlot,
)

GET_COLL = "GET /api/blog/posts"
POST = "POST /api/blog/posts"
DELETE_ONE = "DELETE /api/blog/posts/{id}"
GET_ONE = "GET /api/blog/posts/{id}"
PUT_ONE = "PUT /api/blog/posts/{id}"


def step(template_id, rendering=0):
    return SequenceStep(template_id, rendering)


@pytest.fixture(scope="module")
def pure_grammar(blog_model):
    # Dependency logic does not touch the network; the baked host is moot.
    return compile_grammar(blog_model)


# --------------------------------------------------------------------------
# Config


class TestConfig:
    def test_strategy_parsing_normalizes_separators(self):
        assert Strategy.parse("bfs") is Strategy.BFS
        assert Strategy.parse("BFS_FAST") is Strategy.BFS_FAST
        assert Strategy.parse(" random_walk ") is Strategy.RANDOM_WALK
        with pytest.raises(ConfigError, match="unknown strategy"):
            Strategy.parse("dfs")

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"max_length": 0},
            {"worker_count": 0},
            {"combination_cap": 0},
            {"time_budget": -1.0},
            {"strategy": Strategy.RANDOM_WALK},  # needs a budget
            {"error_status_classes": ("5xxx",)},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            EngineConfig(**kwargs).validate()

    def test_defaults_validate(self):
        EngineConfig().validate()
        EngineConfig(strategy=Strategy.RANDOM_WALK, time_budget=5.0).validate()

    def test_to_dict_is_json_shaped(self):
        data = EngineConfig().to_dict()
        assert data["strategy"] == "bfs-fast"
        assert data["error_status_classes"] == ["5xx"]


# --------------------------------------------------------------------------
# Dependency checking


class TestDependencies:
    def test_no_consumers_is_satisfied_by_anything(self, pure_grammar):
        template = pure_grammar.template_by_id(GET_COLL)
        assert dependencies_satisfied((), template, pure_grammar)

    def test_consumer_blocks_until_produced(self, pure_grammar):
        template = pure_grammar.template_by_id(GET_ONE)
        assert not dependencies_satisfied((), template, pure_grammar)
        assert dependencies_satisfied((step(POST),), template, pure_grammar)

    def test_all_consumed_types_must_be_covered(self, pure_grammar):
        put = pure_grammar.template_by_id(PUT_ONE)
        # POST yields the id but not the checksum; the fetch adds it.
        assert not dependencies_satisfied((step(POST),), put, pure_grammar)
        assert dependencies_satisfied((step(POST), step(GET_ONE)), put, pure_grammar)

    def test_sequence_produces_includes_externals(self):
        key = ResourceType("cfg/key")
        template = RequestTemplate(
            id="T0",
            method="GET",
            slots=(StaticSlot(b"GET /t HTTP/1.1\r\n"), ConsumerSlot(key)),
            producers=(),
            declaration_index=0,
        )
        grammar = GrammarProgram(templates=(template,), external_values={key: "abc"})
        assert key in sequence_produces((), grammar)
        assert dependencies_satisfied((), template, grammar)


# --------------------------------------------------------------------------
# Extension strategies, worked examples


class TestExtendExamples:
    def test_initial_frontier_is_the_dependency_free_templates(self, pure_grammar):
        candidates = extend([()], pure_grammar, Strategy.BFS)
        assert [(c.prefix, c.template_id) for c in candidates] == [
            ((), GET_COLL),
            ((), POST),
        ]

    def test_bfs_is_sequence_major_declaration_minor(self, pure_grammar):
        seq_a = (step(POST),)
        seq_b = (step(GET_COLL),)
        candidates = extend([seq_a, seq_b], pure_grammar, Strategy.BFS)
        assert [(c.prefix, c.template_id) for c in candidates] == [
            (seq_a, GET_COLL),
            (seq_a, POST),
            (seq_a, DELETE_ONE),
            (seq_a, GET_ONE),
            (seq_b, GET_COLL),
            (seq_b, POST),
        ]

    def test_bfs_fast_takes_first_satisfying_sequence_per_template(self, pure_grammar):
        seq_a = (step(POST),)
        seq_b = (step(GET_COLL),)
        candidates = extend([seq_a, seq_b], pure_grammar, Strategy.BFS_FAST)
        assert [(c.prefix, c.template_id) for c in candidates] == [
            (seq_a, GET_COLL),
            (seq_a, POST),
            (seq_a, DELETE_ONE),
            (seq_a, GET_ONE),
        ]

    def test_exhaustion_is_an_empty_candidate_list(self, pure_grammar):
        assert extend([], pure_grammar, Strategy.BFS) == []
        assert extend([], pure_grammar, Strategy.BFS_FAST) == []
        assert extend([], pure_grammar, Strategy.RANDOM_WALK, random.Random(0)) == []

    def test_walk_draws_one_candidate_deterministically(self, pure_grammar):
        seq_set = [(), (step(POST),)]
        first = extend(seq_set, pure_grammar, Strategy.RANDOM_WALK, random.Random(7))
        again = extend(seq_set, pure_grammar, Strategy.RANDOM_WALK, random.Random(7))
        assert len(first) == 1
        assert first == again

    def test_walk_without_rng_is_a_programming_error(self, pure_grammar):
        with pytest.raises(ValueError):
            extend([()], pure_grammar, Strategy.RANDOM_WALK)


# --------------------------------------------------------------------------
# Extension strategies, property over random grammars


def abstract_grammar(produce_sets, consume_sets):
    templates = []
    for i, (prod, cons) in enumerate(zip(produce_sets, consume_sets)):
        slots = [StaticSlot(f"GET /t{i} HTTP/1.1\r\n".encode())]
        slots += [ConsumerSlot(ResourceType(r)) for r in sorted(cons)]
        templates.append(
            RequestTemplate(
                id=f"T{i}",
                method="GET",
                slots=tuple(slots),
                producers=tuple(ProducerSpec(ResourceType(r), ("x",)) for r in sorted(prod)),
                declaration_index=i,
            )
        )
    return GrammarProgram(templates=tuple(templates))


@st.composite
def grammar_and_frontier(draw):
    count = draw(st.integers(min_value=1, max_value=5))
    resources = ("r0", "r1", "r2")
    produce_sets = [
        draw(st.sets(st.sampled_from(resources), max_size=2)) for _ in range(count)
    ]
    pool = sorted(set().union(*produce_sets))
    consume_sets = [
        draw(st.sets(st.sampled_from(pool), max_size=2)) if pool else set()
        for _ in range(count)
    ]
    grammar = abstract_grammar(produce_sets, consume_sets)

    # Take the frontier a real accept-everything search would reach.
    depth = draw(st.integers(min_value=0, max_value=2))
    seq_set = [()]
    for _ in range(depth):
        candidates = extend(seq_set, grammar, Strategy.BFS)
        if not candidates:
            break
        seq_set = [c.prefix + (step(c.template_id),) for c in candidates]
    return grammar, seq_set


@settings(max_examples=200, deadline=None)
@given(grammar_and_frontier())
def test_bfs_fast_covers_each_satisfiable_template_exactly_once(case):
    grammar, seq_set = case
    bfs = extend(seq_set, grammar, Strategy.BFS)
    fast = extend(seq_set, grammar, Strategy.BFS_FAST)

    # Fast candidates are a subset of full-BFS candidates ...
    assert set(fast) <= set(bfs)
    # ... at most one per template ...
    assert len(fast) <= len(grammar.templates)
    assert len(fast) == len({c.template_id for c in fast})
    # ... covering exactly the templates BFS would cover ...
    assert {c.template_id for c in fast} == {c.template_id for c in bfs}
    # ... each paired with the first sequence that satisfies it.
    for candidate in fast:
        template = grammar.template_by_id(candidate.template_id)
        first = next(s for s in seq_set if dependencies_satisfied(s, template, grammar))
        assert candidate.prefix == first


# --------------------------------------------------------------------------
# Full campaigns against the live service
#
# The numbers asserted here were worked out by hand from the grammar and the
# service's behaviour (renderings per template, which finals stay 2xx), then
# confirmed live; they make any drift in search order, retention or
# extraction counting fail loudly.


def rows(report):
    return [(r.length, r.tests, r.seqset_size, r.dynamic_objects) for r in report.per_length]


class TestBfsCampaigns:
    def test_length_one_exact_counts(self, run_campaign):
        report = run_campaign(strategy=Strategy.BFS, max_length=1)
        assert report.total_tests == 3
        assert rows(report) == [(1, 3, 2, 1)]
        assert report.status_totals == {"valid": 2, "invalid": 1}
        assert report.stopped_reason == "max_length"
        assert report.buckets == []

    def test_length_three_full_campaign(self, run_campaign):
        report = run_campaign(strategy=Strategy.BFS, max_length=3)
        assert report.total_tests == 41
        assert rows(report) == [(1, 3, 2, 1), (2, 8, 6, 8), (3, 30, 20, 49)]
        assert report.status_totals == {"valid": 28, "invalid": 12, "bug": 1}
        assert report.status_group_totals == {"2xx": 96, "4xx": 12, "5xx": 1}
        assert report.max_length_reached == 3
        assert report.restarts == 0
        assert report.buckets == [
            {
                "bucket_id": "c46f74afdc64",
                "defining_sequence": [POST, GET_ONE, PUT_ONE],
                "instances": 1,
            }
        ]
        assert report.behavioral_coverage == 9
        assert (PUT_ONE, "5xx") in report.behaviors

    def test_bfs_fast_frozen_campaign(self, run_campaign):
        report = run_campaign(strategy=Strategy.BFS_FAST, max_length=3)
        assert report.total_tests == 15
        assert rows(report) == [(1, 3, 2, 1), (2, 5, 4, 4), (3, 7, 4, 8)]
        assert [b["bucket_id"] for b in report.buckets] == ["c46f74afdc64"]

    def test_no_feedback_keeps_every_rendering(self, run_campaign):
        report = run_campaign(strategy=Strategy.BFS, max_length=3, no_feedback=True)
        assert report.total_tests == 83
        assert [(r.length, r.tests, r.seqset_size) for r in report.per_length] == [
            (1, 3, 3),
            (2, 13, 13),
            (3, 67, 67),
        ]
        # Pruning pays: the same search with feedback needs half the tests.
        assert report.total_tests >= 2 * 41
        # The planted bug is still found either way.
        assert [b["bucket_id"] for b in report.buckets] == ["c46f74afdc64"]

    def test_no_deps_explodes_and_finds_nothing(self, run_campaign):
        report = run_campaign(strategy=Strategy.BFS, max_length=3, no_deps=True)
        assert report.total_tests == 195
        assert [(r.length, r.tests, r.seqset_size) for r in report.per_length] == [
            (1, 15, 3),
            (2, 45, 9),
            (3, 135, 27),
        ]
        assert report.buckets == []
        assert report.status_totals.get("bug", 0) == 0


class TestWalkCampaigns:
    def test_walk_ignores_max_length_and_stops_on_budget(self, run_campaign):
        report = run_campaign(
            strategy=Strategy.RANDOM_WALK,
            max_length=1,
            time_budget=2.0,
            rng_seed=0,
        )
        assert report.stopped_reason == "time_budget"
        assert report.max_length_reached > 1
        assert report.total_tests > 0


class TestRunControl:
    def test_preset_stop_flag_interrupts_before_any_test(self, blog_server, blog_model):
        grammar = compile_grammar(blog_model, host=f"127.0.0.1:{blog_server.port}")
        conn = ConnectionConfig("127.0.0.1", blog_server.port)
        engine = FuzzEngine(
            grammar,
            FuzzingDictionary.default(),
            EngineConfig(strategy=Strategy.BFS, max_length=3),
            transport_factory=lambda: SocketTransport(conn),
        )
        engine.stop_requested.set()
        report = engine.run()
        assert report.stopped_reason == "interrupted"
        assert report.total_tests == 0

    def test_expired_budget_stops_immediately(self, run_campaign):
        report = run_campaign(strategy=Strategy.BFS, max_length=3, time_budget=1e-9)
        assert report.stopped_reason == "time_budget"
        assert report.total_tests == 0


# --------------------------------------------------------------------------
# Determinism


def run_on_fresh_server(blog_model, **config_kwargs):
    handle = serve()
    try:
        grammar = compile_grammar(blog_model, host=f"127.0.0.1:{handle.port}")
        conn = ConnectionConfig("127.0.0.1", handle.port)
        engine = FuzzEngine(
            grammar,
            FuzzingDictionary.default(),
            EngineConfig(**config_kwargs),
            transport_factory=lambda: SocketTransport(conn),
        )
        return engine.run()
    finally:
        handle.stop()


class TestDeterminism:
    def test_same_config_same_fingerprint_on_fresh_targets(self, blog_model):
        first = run_on_fresh_server(blog_model, strategy=Strategy.BFS, max_length=2)
        second = run_on_fresh_server(blog_model, strategy=Strategy.BFS, max_length=2)
        assert first.fingerprint() == second.fingerprint()

    def test_worker_count_does_not_change_the_outcome(self, blog_model):
        solo = run_on_fresh_server(blog_model, strategy=Strategy.BFS, max_length=3)
        duo = run_on_fresh_server(
            blog_model, strategy=Strategy.BFS, max_length=3, worker_count=2
        )
        assert duo.fingerprint() == solo.fingerprint()
