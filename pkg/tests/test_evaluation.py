import random

import numpy as np
import pytest

from irera.data import LabeledExample
from irera.errors import KNonPositive, LengthMismatch
from irera.evaluation import (
    MetricReport,
    evaluate,
    evaluation_report,
    parse_metric,
    rp_at_k,
    rp_contribution,
    verify_budget,
    verify_inference_calls,
)
from irera.lm import CallableChat
from irera.program import Prediction, baseline_prior
from irera.retrieval import LabelOntology

from helpers import build_glass_box_engine, label_names, make_dataset, oracle_rp_at_k


def random_instances(seed, trials, *, max_n=20, max_labels=50):
    rng = random.Random(seed)
    for _ in range(trials):
        n_labels = rng.randint(5, max_labels)
        n = rng.randint(1, max_n)
        orders, golds = [], []
        for _ in range(n):
            order = list(range(n_labels))
            rng.shuffle(order)
            golds.append(frozenset(rng.sample(range(n_labels),
                                              rng.randint(1, min(8, n_labels)))))
            orders.append(order)
        yield orders, golds


class TestRpAtK:
    def test_perfect_single_label(self):
        assert rp_at_k([[0, 1, 2, 3, 4]], [frozenset({0})], 5) == 1.0

    def test_two_of_three_in_top_five(self):
        order = [10, 0, 11, 1, 12, 2]
        gold = frozenset({0, 1, 2})
        assert rp_at_k([order], [gold], 5) == pytest.approx(2 / 3, abs=1e-15)

    def test_matches_exhaustive_oracle(self):
        for orders, golds in random_instances(21, 200):
            for k in (1, 5, 10):
                got = rp_at_k(orders, golds, k)
                want = oracle_rp_at_k(orders, golds, k)
                assert abs(got - want) <= 1e-9

    def test_boundary_equals_precision_and_recall(self):
        rng = random.Random(22)
        for _ in range(50):
            n_labels = rng.randint(5, 30)
            r_n = rng.randint(1, min(8, n_labels))
            gold = frozenset(rng.sample(range(n_labels), r_n))
            order = list(range(n_labels))
            rng.shuffle(order)
            k = r_n
            hits = sum(1 for label in order[:k] if label in gold)
            precision = hits / k
            recall = hits / r_n
            value = rp_contribution(order, gold, k)
            assert value == precision == recall

    def test_invariant_below_rank_k(self):
        order = [5, 6, 7, 0, 1, 2, 3, 4]
        gold = frozenset({5, 0})
        base = rp_contribution(order, gold, 3)
        shuffled_tail = order[:3] + order[3:][::-1]
        assert rp_contribution(shuffled_tail, gold, 3) == base

    def test_monotone_numerator_in_k(self):
        rng = random.Random(23)
        for orders, golds in random_instances(24, 20):
            for order, gold in zip(orders, golds):
                hits = [sum(1 for label in order[:k] if label in gold)
                        for k in range(1, len(order) + 1)]
                assert all(b >= a for a, b in zip(hits, hits[1:]))

    def test_errors(self):
        with pytest.raises(KNonPositive):
            rp_at_k([[0]], [frozenset({0})], 0)
        with pytest.raises(LengthMismatch):
            rp_at_k([[0]], [], 5)
        with pytest.raises(LengthMismatch):
            rp_at_k([], [], 5)

    def test_parse_metric(self):
        assert parse_metric("rp@10") == 10
        assert parse_metric("RP@5") == 5
        with pytest.raises(ValueError):
            parse_metric("ndcg@10")
        with pytest.raises(KNonPositive):
            parse_metric("rp@0")


class TestEvaluate:
    def test_glass_box_perfect(self):
        examples = make_dataset(50, seed=25)
        program = build_glass_box_engine(examples)
        report = evaluate(lambda t: program.forward(t), examples, ks=(5, 10),
                          num_labels=100, ledger=program.client.ledger)
        assert report.values[5] == 1.0 and report.values[10] == 1.0
        assert report.failures == 0
        assert report.ledger_delta.invocations == {"infer": 50, "retrieve": 50, "rank": 50}

    def test_prior_baseline_aligned_dataset(self):
        priors = np.linspace(0.9, 0.0, 20)
        ontology = LabelOntology(label_names(20), priors)
        examples = [LabeledExample("any", frozenset({0, 1, 2}))]
        report = evaluate(lambda t: baseline_prior(ontology), examples, ks=(5,), num_labels=20)
        assert report.values[5] == 1.0

    def test_report_recombines_from_contributions(self):
        examples = make_dataset(20, seed=26)
        program = build_glass_box_engine(
            examples,
            infer_student=CallableChat(
                lambda p: "label_1, label_2" if "document 1 " in p else ""))
        report = evaluate(lambda t: program.forward(t), examples, ks=(5, 10), num_labels=100)
        for k, value in report.values.items():
            assert value == pytest.approx(float(np.mean(report.contributions[k])), abs=1e-15)
            per_example = [
                rp_contribution(  # recompute independently

                    program.forward(ex.text).final_order, ex.gold, k)
                for ex in examples
            ]
            assert report.contributions[k] == pytest.approx(per_example, abs=1e-15)

    def test_crash_degrades_to_fallback_and_counts(self):
        examples = make_dataset(5, seed=27)
        calls = {"n": 0}

        def flaky_forward(text):
            calls["n"] += 1
            if calls["n"] == 3:
                raise RuntimeError("boom")
            return Prediction(final_order=np.arange(100))

        report = evaluate(flaky_forward, examples, ks=(5,), num_labels=100)
        assert report.n_examples == 5
        assert report.failures == 1

    def test_parallel_matches_serial(self):
        examples = make_dataset(30, seed=28)
        program = build_glass_box_engine(examples)
        serial = evaluate(lambda t: program.forward(t), examples, ks=(5, 10), num_labels=100)
        parallel = evaluate(lambda t: program.forward(t), examples, ks=(5, 10),
                            num_labels=100, max_workers=8)
        assert serial.values == parallel.values
        assert serial.contributions == parallel.contributions

    def test_cached_reevaluation_adds_no_upstream(self):
        examples = make_dataset(10, seed=29)
        program = build_glass_box_engine(examples)
        ledger = program.client.ledger
        first = evaluate(lambda t: program.forward(t), examples, ks=(5,), num_labels=100,
                         ledger=ledger)
        second = evaluate(lambda t: program.forward(t), examples, ks=(5,), num_labels=100,
                          ledger=ledger)
        assert first.values == second.values
        assert all(c["upstream_calls"] == 0 for c in second.ledger_delta.to_dict()["counters"])

    def test_report_serialization(self):
        report = MetricReport(values={5: 0.5}, n_examples=2, contributions={5: [1.0, 0.0]},
                              failures=1, unmatched_rank_outputs=3)
        body = evaluation_report(report, dataset_id="test", program_digest="abc")
        assert body["dataset"] == "test"
        assert body["rp"]["5"] == {"value": 0.5, "percent": 50.0}
        assert "0.5000" in report.render_text()


class TestVerifyBudget:
    def make_budget(self, *, s1_teacher=10, s1_student=500, s2_teacher=10,
                    s2_student=500, s2_infer_student=0):
        def delta(rows):
            return {"counters": [
                {"backend": b, "role": r, "upstream_calls": u, "cache_hits": 0}
                for b, r, u in rows], "invocations": {}}

        return {
            "expected": {"train_size": 10, "validation_size": 50, "num_programs": 10},
            "stages": [
                {"module": "infer", "student_backend": "infer-student",
                 "teacher_backend": "infer-teacher",
                 "ledger_delta": delta([("infer-teacher", "teacher", s1_teacher),
                                        ("infer-student", "student", s1_student)])},
                {"module": "rank", "student_backend": "rank-student",
                 "teacher_backend": "rank-teacher",
                 "ledger_delta": delta([("rank-teacher", "teacher", s2_teacher),
                                        ("rank-student", "student", s2_student),
                                        ("infer-student", "student", s2_infer_student)])},
            ],
        }

    def test_within_bounds_passes(self):
        ok, checks = verify_budget(self.make_budget(), train_size=10, val_size=50,
                                   num_programs=10)
        assert ok and all(c.ok for c in checks)

    @pytest.mark.parametrize("kwargs", [
        {"s1_teacher": 11}, {"s1_student": 501}, {"s2_student": 999},
        {"s2_infer_student": 1},
    ])
    def test_violations_fail(self, kwargs):
        ok, checks = verify_budget(self.make_budget(**kwargs), train_size=10, val_size=50,
                                   num_programs=10)
        assert not ok
        assert any(not c.ok for c in checks)
        assert all("expected" in c.render() for c in checks)

    def test_inference_call_counts(self):
        delta = {"invocations": {"infer": 250, "retrieve": 250, "rank": 250}}
        ok, _ = verify_inference_calls(delta, 250, ("infer", "retrieve", "rank"))
        assert ok
        ok, checks = verify_inference_calls(delta, 250, ("infer", "retrieve", "rank", "other"))
        assert not ok
        assert checks[-1].actual == "0"
