"""Rank-precision evaluation and cost-budget verification.

RP@K averages, over examples, the top-K gold hit count divided by
min(K, number of gold labels), so it equals precision@K when K is at most
the gold count and recall@K when K is at least it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import LabeledExample
from .errors import KNonPositive, LengthMismatch
from .lm.ledger import CallLedger, LedgerSnapshot
from .program import Prediction, degenerate_prediction

import logging

logger = logging.getLogger(__name__)


def rp_contribution(final_order: Sequence[int], gold: frozenset[int] | set[int], k: int) -> float:
    """One example's rank-precision at k."""
    if k <= 0:
        raise KNonPositive(f"k must be positive, got {k}")
    if not gold:
        raise ValueError("example has no gold labels")
    top = list(final_order[:k])
    hits = sum(1 for label in top if label in gold)
    return hits / min(k, len(gold))


def rp_at_k(final_orders: Sequence[Sequence[int]], golds: Sequence[frozenset[int]], k: int) -> float:
    """Mean rank-precision at k over a dataset."""
    if len(final_orders) != len(golds):
        raise LengthMismatch(f"{len(final_orders)} predictions vs {len(golds)} gold sets")
    if not final_orders:
        raise LengthMismatch("need at least one example")
    return sum(rp_contribution(o, g, k) for o, g in zip(final_orders, golds)) / len(final_orders)


METRICS = {"rp"}


def parse_metric(name: str) -> int:
    """Metric identifiers look like "rp@10"; returns the K."""
    try:
        metric, k = name.lower().split("@")
        if metric.strip() not in METRICS:
            raise ValueError
        k = int(k)
    except ValueError:
        raise ValueError(f"unknown metric {name!r} (expected e.g. 'rp@10')")
    if k <= 0:
        raise KNonPositive(f"metric {name!r} has non-positive K")
    return k


@dataclass
class MetricReport:
    """RP@K values plus everything needed to recompute them."""

    values: dict[int, float]
    n_examples: int
    contributions: dict[int, list[float]]
    failures: int = 0
    unmatched_rank_outputs: int = 0
    ledger_delta: LedgerSnapshot | None = None

    def to_dict(self) -> dict:
        out = {
            "n_examples": self.n_examples,
            "rp": {str(k): {"value": v, "percent": round(100.0 * v, 4)}
                   for k, v in sorted(self.values.items())},
            "failures": self.failures,
            "unmatched_rank_outputs": self.unmatched_rank_outputs,
            "per_example": {str(k): v for k, v in sorted(self.contributions.items())},
        }
        if self.ledger_delta is not None:
            out["ledger_delta"] = self.ledger_delta.to_dict()
        return out

    def render_text(self) -> str:
        lines = [f"examples: {self.n_examples}"]
        for k, v in sorted(self.values.items()):
            lines.append(f"RP@{k:<3d} {v:.4f}  ({100.0 * v:.2f}%)")
        lines.append(f"failures: {self.failures}")
        lines.append(f"unmatched rank outputs: {self.unmatched_rank_outputs}")
        if self.ledger_delta is not None:
            for (backend, role), counts in sorted(self.ledger_delta.counters.items()):
                lines.append(f"calls[{backend}/{role}]: upstream={counts['upstream_calls']} "
                             f"cache_hits={counts['cache_hits']}")
            for component, count in sorted(self.ledger_delta.invocations.items()):
                lines.append(f"invocations[{component}]: {count}")
        return "\n".join(lines)


def evaluate(forward_fn: Callable[[str], Prediction], examples: Sequence[LabeledExample],
             ks: Iterable[int] = (5, 10), *, num_labels: int,
             ledger: CallLedger | None = None, max_workers: int = 1) -> MetricReport:
    """Run a program (or baseline) over a dataset and score it.

    Per-example crashes are degraded to the identity fallback ranking and
    counted as failures, never dropped, so the metric denominator always
    matches the dataset size. Results are reduced in example order whatever
    the concurrency.
    """
    ks = sorted(set(int(k) for k in ks))
    if not examples:
        raise LengthMismatch("dataset is empty")
    before = ledger.snapshot() if ledger is not None else None

    def run_one(example: LabeledExample) -> Prediction:
        try:
            return forward_fn(example.text)
        except Exception as exc:
            logger.warning("forward pass failed (%s); using fallback ranking", exc)
            return degenerate_prediction(num_labels)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            predictions = list(pool.map(run_one, examples))
    else:
        predictions = [run_one(ex) for ex in examples]

    contributions = {
        k: [rp_contribution(p.final_order, ex.gold, k) for p, ex in zip(predictions, examples)]
        for k in ks
    }
    report = MetricReport(
        values={k: float(np.mean(contributions[k])) for k in ks},
        n_examples=len(examples),
        contributions=contributions,
        failures=sum(1 for p in predictions if p.failed),
        unmatched_rank_outputs=sum(p.unmatched_rank_outputs for p in predictions),
        ledger_delta=ledger.delta(before) if ledger is not None else None,
    )
    return report


def evaluation_report(report: MetricReport, *, dataset_id: str, program_digest: str = "") -> dict:
    """The machine-readable report file body."""
    out = {"dataset": dataset_id, "program_digest": program_digest}
    out.update(report.to_dict())
    return out


# -- budget verification -------------------------------------------------------


@dataclass
class BudgetCheck:
    name: str
    ok: bool
    expected: str
    actual: str

    def render(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"[{status}] {self.name}: expected {self.expected}, observed {self.actual}"


def _delta_upstream(delta: dict, backend: str, role: str) -> int:
    for row in delta.get("counters", []):
        if row["backend"] == backend and row["role"] == role:
            return int(row["upstream_calls"])
    return 0


def verify_budget(budget: dict, *, train_size: int, val_size: int,
                  num_programs: int) -> tuple[bool, list[BudgetCheck]]:
    """Check an optimization budget report against the cost model: per
    optimized module at most |train| teacher calls and num_programs x |val|
    student calls, and zero fresh first-module student calls in the second
    stage (the cache replays them)."""
    checks: list[BudgetCheck] = []
    stages = budget.get("stages", [])
    per_module_student_max = num_programs * val_size

    for stage in stages:
        name = stage["module"]
        delta = stage["ledger_delta"]
        teacher = _delta_upstream(delta, stage["teacher_backend"], "teacher")
        checks.append(BudgetCheck(
            f"stage[{name}] teacher upstream <= train size",
            teacher <= train_size, f"<= {train_size}", str(teacher)))
        student = _delta_upstream(delta, stage["student_backend"], "student")
        checks.append(BudgetCheck(
            f"stage[{name}] student upstream <= num_programs * val size",
            student <= per_module_student_max, f"<= {per_module_student_max}", str(student)))

    if len(stages) >= 2:
        first = stages[0]
        for later in stages[1:]:
            if later["student_backend"] == first["student_backend"]:
                # one shared backend id serves both modules: the counter mixes
                # them and the frozen-module claim cannot be attributed
                continue
            frozen = _delta_upstream(later["ledger_delta"], first["student_backend"], "student")
            checks.append(BudgetCheck(
                f"stage[{later['module']}] {first['module']}-student upstream == 0 (cache replay)",
                frozen == 0, "0", str(frozen)))

    total_teacher = sum(
        _delta_upstream(stage["ledger_delta"], stage["teacher_backend"], "teacher")
        for stage in stages)
    bound = train_size * max(len(stages), 1)
    checks.append(BudgetCheck("total teacher upstream <= train size * optimized modules",
                              total_teacher <= bound, f"<= {bound}", str(total_teacher)))
    return all(c.ok for c in checks), checks


def verify_inference_calls(delta: LedgerSnapshot | dict, n_inputs: int,
                           components: Sequence[str]) -> tuple[bool, list[BudgetCheck]]:
    """Exact per-input component counts: every listed component must have run
    exactly once per input."""
    invocations = delta.invocations if isinstance(delta, LedgerSnapshot) else delta.get("invocations", {})
    checks = []
    for component in components:
        actual = int(invocations.get(component, 0))
        checks.append(BudgetCheck(f"invocations[{component}] == inputs",
                                  actual == n_inputs, str(n_inputs), str(actual)))
    return all(c.ok for c in checks), checks
