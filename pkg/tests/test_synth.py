"""Synthetic scenario generator: closed forms, determinism, cross-checks."""

import io
import math

import pytest

from cmprof import (
    Config,
    Sample,
    Scenario,
    ScenarioError,
    generate,
    merge_paths,
    oracle_cmetric,
    rank_top_n,
    run_replay,
    serialize_event,
    validate_trace,
)


def close_to(a, b, rel=1e-9):
    return math.isclose(a, b, rel_tol=rel, abs_tol=1e-9)


def trace_bytes(events):
    buf = io.StringIO()
    for ev in events:
        buf.write(serialize_event(ev) + "\n")
    return buf.getvalue()


ALL_SCENARIOS = [
    Scenario(kind="serial", threads=4, cpus=4, n_min=2, seed=3),
    Scenario(kind="serial", threads=1, cpus=1, parallel_ns=10, serial_ns=5),
    Scenario(kind="balanced", threads=4, cpus=4, seed=1),
    Scenario(kind="convoy", threads=2, cpus=1, critical_ns=10_000, rounds=3,
             work_ns=0, n_min=2),
    Scenario(kind="convoy", threads=8, cpus=4, critical_ns=9_000, rounds=5,
             work_ns=0, n_min=4, sample_period=1_000, seed=9),
    Scenario(kind="convoy", threads=4, cpus=6, critical_ns=10_000, rounds=4,
             work_ns=12_000, sample_period=700, seed=5),
    Scenario(kind="pipeline", threads=2, cpus=2, stages=(1, 1),
             service_ns=(10, 30), items=3),
    Scenario(kind="pipeline", threads=7, cpus=8, stages=(1, 2, 3, 1),
             service_ns=(50, 400, 90, 60), items=40, sample_period=25,
             seed=2),
]


class TestSerialClosedForm:
    def test_four_thread_example(self):
        s = Scenario(kind="serial", threads=4, cpus=4, n_min=2,
                     parallel_ns=100_000, serial_ns=400_000)
        _, _, truth = generate(s)
        # serial thread: P/4 + S; the rest: P/4
        assert truth.cmetric == {1: 425_000.0, 2: 25_000.0,
                                 3: 25_000.0, 4: 25_000.0}
        assert truth.top_function == "serial_work"
        assert truth.critical_slices == 1 and truth.total_slices == 4
        assert truth.cr == 0.25

    def test_general_closed_form(self):
        for k, p, ssn in ((2, 7, 13), (5, 1000, 1), (8, 64, 4096)):
            s = Scenario(kind="serial", threads=k, cpus=k, parallel_ns=p,
                         serial_ns=ssn)
            _, _, truth = generate(s)
            assert close_to(truth.cmetric[1], p / k + ssn)
            for tid in range(2, k + 1):
                assert close_to(truth.cmetric[tid], p / k)


class TestBalancedClosedForm:
    def test_even_split_and_zero_critical(self):
        s = Scenario(kind="balanced", threads=4, cpus=4, work_ns=100_000)
        _, _, truth = generate(s)
        assert truth.cmetric == {t: 25_000.0 for t in (1, 2, 3, 4)}
        assert truth.critical_slices == 0
        assert truth.cr == 0.0 and truth.top_path is None


class TestConvoyClosedForm:
    def test_alternation(self):
        s = Scenario(kind="convoy", threads=2, cpus=1, critical_ns=10_000,
                     rounds=3, work_ns=0, n_min=2)
        _, _, truth = generate(s)
        # each critical-section slice runs with one active thread
        assert truth.cmetric == {1: 30_000.0, 2: 30_000.0}
        assert truth.top_function == "critical_section"
        assert truth.cr == 1.0  # av == 1 < 2 for every slice

    def test_half_threshold_of_two_threads_never_triggers(self):
        s = Scenario(kind="convoy", threads=2, cpus=1, critical_ns=10_000,
                     rounds=3, work_ns=0)
        _, _, truth = generate(s)
        assert truth.cr == 0.0  # av == 1 is not strictly below 2/2


class TestGeneratorContracts:
    @pytest.mark.parametrize("scenario", ALL_SCENARIOS,
                             ids=lambda s: f"{s.kind}-t{s.threads}-s{s.seed}")
    def test_validates_and_reproduces_truth(self, scenario):
        events, symbols, truth = generate(scenario)
        validate_trace(events)
        records, stats = run_replay(events, Config(n_min=scenario.n_min))
        assert set(stats.cm_hash) == set(truth.cmetric)
        for tid, expected in truth.cmetric.items():
            assert close_to(stats.cm_hash[tid], expected), (scenario, tid)
        assert stats.total_slices == truth.total_slices
        assert stats.critical_slices == truth.critical_slices
        assert stats.cr == truth.cr
        ranked = rank_top_n(merge_paths(records), 1)
        if truth.top_path is None:
            assert ranked == []
        else:
            assert ranked[0].path == truth.top_path
        # every sampled ip must symbolize: generated ips stay in range
        for ev in events:
            if isinstance(ev, Sample):
                assert symbols.lookup(ev.ip) is not None

    @pytest.mark.parametrize("scenario", ALL_SCENARIOS,
                             ids=lambda s: f"{s.kind}-t{s.threads}-s{s.seed}")
    def test_oracle_agrees(self, scenario):
        events, _, truth = generate(scenario)
        reference = oracle_cmetric(events)
        for tid, expected in truth.cmetric.items():
            assert close_to(reference[tid], expected), (scenario, tid)

    def test_same_seed_same_bytes(self):
        s = Scenario(kind="convoy", threads=4, cpus=6, critical_ns=5_000,
                     rounds=6, work_ns=6_000, sample_period=400, seed=42)
        first = trace_bytes(generate(s)[0])
        second = trace_bytes(generate(s)[0])
        assert first == second

    def test_different_seed_changes_sampled_ips(self):
        base = dict(kind="convoy", threads=4, cpus=6, critical_ns=5_000,
                    rounds=6, work_ns=6_000, sample_period=400)
        a = trace_bytes(generate(Scenario(seed=1, **base))[0])
        b = trace_bytes(generate(Scenario(seed=2, **base))[0])
        assert a != b

    def test_pipeline_hand_case(self):
        # stages (1,1), services (10,30), 3 items:
        #   stage0 busy [0,30): shares 10/1 + 20/2          = 20
        #   stage1 busy [10,100): shares 20/2 + 70/1        = 80
        s = Scenario(kind="pipeline", threads=2, cpus=2, stages=(1, 1),
                     service_ns=(10, 30), items=3)
        _, _, truth = generate(s)
        assert truth.cmetric == {1: 20.0, 2: 80.0}

    def test_pipeline_idle_workers_get_zero(self):
        s = Scenario(kind="pipeline", threads=7, cpus=7, stages=(1, 5, 1),
                     service_ns=(10, 10, 10), items=2)
        _, _, truth = generate(s)
        assert truth.cmetric[4] == 0.0  # third worker of stage 1: no items
        assert len(truth.cmetric) == 7


class TestScenarioValidation:
    @pytest.mark.parametrize("scenario", [
        Scenario(kind="serial", threads=0, cpus=4),
        Scenario(kind="serial", threads=4, cpus=3),
        Scenario(kind="serial", threads=2, cpus=2, parallel_ns=0),
        Scenario(kind="balanced", threads=3, cpus=3, work_ns=0),
        Scenario(kind="convoy", threads=1, cpus=1),
        Scenario(kind="convoy", threads=3, cpus=3, work_ns=50),
        Scenario(kind="convoy", threads=2, cpus=8, critical_ns=100,
                 work_ns=100, rounds=1),
        Scenario(kind="pipeline", threads=2, cpus=2, stages=(1, 1),
                 service_ns=(10,), items=2),
        Scenario(kind="pipeline", threads=3, cpus=3, stages=(1, 1),
                 service_ns=(10, 10), items=2),
        Scenario(kind="pipeline", threads=2, cpus=2, stages=(1, 1),
                 service_ns=(10, 10), items=0),
        Scenario(kind="nosuch", threads=2, cpus=2),
    ], ids=lambda s: s.kind + "-bad")
    def test_invalid_parameters_rejected(self, scenario):
        with pytest.raises(ScenarioError):
            generate(scenario)
