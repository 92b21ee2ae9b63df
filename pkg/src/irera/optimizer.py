"""Bootstrap-few-shot with random search, applied sequentially per module.

A zero-shot teacher pass over the training inputs yields traces; random
demo subsets drawn from the usable traces become candidate programs; each
candidate is scored on the validation set and the best one wins (the
zero-shot candidate is always in the pool, so the selected score can never
be worse). The first module is optimized inside the rank-free ablation and
frozen; the second is optimized inside the full program. Because the frozen
module's prompts do not change across second-stage candidates, the call
cache replays them and the second stage adds no upstream calls for it.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Sequence

from .data import LabeledExample
from .evaluation import evaluate, parse_metric, rp_contribution
from .lm.ledger import ROLE_TEACHER
from .program import InferRetrieveRank, Trace
from .signatures import Demo

logger = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    train_inputs: list[LabeledExample]
    validation: list[LabeledExample]
    num_programs: int = 10
    max_demos: int = 4
    rng_seed: int = 0
    metric: str = "rp@10"
    max_workers: int = 1
    # With labeled train inputs, optionally keep only traces whose stage
    # metric is positive. Off by default: training inputs are treated as
    # unlabeled and traces are accepted unfiltered.
    filter_traces_by_metric: bool = False

    def __post_init__(self):
        if self.num_programs < 1:
            raise ValueError("num_programs must be >= 1")
        if self.max_demos < 1:
            raise ValueError("max_demos must be >= 1")
        if self.max_demos > len(self.train_inputs):
            raise ValueError("max_demos cannot exceed the number of training inputs")
        if not self.validation:
            raise ValueError("validation set is empty")
        unlabeled = sum(1 for ex in self.validation if not ex.gold)
        if unlabeled:
            raise ValueError(f"{unlabeled} validation example(s) have no gold labels")


@dataclass
class Candidate:
    """One demo subset for a module; candidate 0 is always zero-shot."""

    id: int
    demos: tuple[Demo, ...]
    score: float | None = None


def bootstrap_traces(program: InferRetrieveRank, train_inputs: Sequence[LabeledExample],
                     *, use_rank: bool, filter_metric_k: int | None = None) -> list[Trace]:
    """Run the stage zero-shot with teachers substituted for students,
    collecting one trace per training input.

    Per-input failures are kept (their records are unusable) rather than
    aborting the batch. Teacher upstream calls stay within one per input per
    module because prompts repeat across stages and hit the cache.
    """
    program.infer.backend_for(ROLE_TEACHER)
    if use_rank:
        program.rank.backend_for(ROLE_TEACHER)

    traces: list[Trace] = []
    for example in train_inputs:
        trace = Trace()
        try:
            prediction = program.forward(example.text, role=ROLE_TEACHER, zero_shot=True,
                                         trace=trace, use_rank=use_rank)
        except Exception as exc:
            logger.warning("bootstrap pass failed on one input (%s); trace marked unusable", exc)
            for record in trace.records:
                record.ok = False
            traces.append(trace)
            continue
        if filter_metric_k is not None and example.gold:
            if rp_contribution(prediction.final_order, example.gold, filter_metric_k) == 0.0:
                for record in trace.records:
                    record.ok = False
        traces.append(trace)
    return traces


def usable_records(traces: Sequence[Trace], module_name: str):
    records = []
    for trace in traces:
        record = trace.get(module_name)
        if record is not None and record.ok:
            records.append(record)
    return records


def sample_candidates(traces: Sequence[Trace], cfg: OptimizerConfig,
                      module_name: str) -> list[Candidate]:
    """Candidate 0 is zero-shot; the rest draw k ~ uniform{1..max_demos}
    usable traces without replacement (clamped to what exists). Fully
    reproducible from the seed."""
    records = usable_records(traces, module_name)
    candidates = [Candidate(0, ())]
    if not records:
        logger.warning("no usable traces for module %r; only the zero-shot candidate is available",
                       module_name)
        return candidates
    rng = random.Random(f"{cfg.rng_seed}/{module_name}")
    for cid in range(1, cfg.num_programs):
        k = min(rng.randint(1, cfg.max_demos), len(records))
        chosen = rng.sample(records, k)
        demos = tuple(Demo({**r.inputs, **r.outputs}) for r in chosen)
        candidates.append(Candidate(cid, demos))
    return candidates


def select_best(program: InferRetrieveRank, module_name: str,
                candidates: Sequence[Candidate], validation: Sequence[LabeledExample],
                metric_k: int, *, use_rank: bool, max_workers: int = 1) -> Candidate:
    """Score every candidate on the full validation set; highest score wins,
    exact ties go to the lower candidate id (zero-shot first). A candidate
    whose evaluation aborts scores 0."""
    best: Candidate | None = None
    for candidate in candidates:
        staged = program.with_demos(module_name, candidate.demos)
        try:
            report = evaluate(
                lambda text: staged.forward(text, use_rank=use_rank),
                validation, ks=(metric_k,), num_labels=len(program.ontology),
                max_workers=max_workers)
            candidate.score = report.values[metric_k]
        except Exception as exc:
            logger.warning("candidate %d evaluation aborted (%s); scored 0", candidate.id, exc)
            candidate.score = 0.0
        if best is None or candidate.score > best.score:  # type: ignore[operator]
            best = candidate
    assert best is not None
    return best


@dataclass
class StageResult:
    module: str
    student_backend: str
    teacher_backend: str
    selected_candidate: int | None = None
    score: float | None = None
    zero_shot_score: float | None = None
    num_usable_traces: int = 0
    candidates: list[dict] = field(default_factory=list)
    ledger_delta: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "module": self.module,
            "student_backend": self.student_backend,
            "teacher_backend": self.teacher_backend,
            "selected_candidate": self.selected_candidate,
            "score": self.score,
            "zero_shot_score": self.zero_shot_score,
            "num_usable_traces": self.num_usable_traces,
            "candidates": self.candidates,
            "ledger_delta": self.ledger_delta,
            "error": self.error,
        }


@dataclass
class OptimizationResult:
    program: InferRetrieveRank
    stages: list[StageResult]
    budget: dict


def _expected_budget(cfg: OptimizerConfig, n_stages: int) -> dict:
    per_module_student = cfg.num_programs * len(cfg.validation)
    return {
        "train_size": len(cfg.train_inputs),
        "validation_size": len(cfg.validation),
        "num_programs": cfg.num_programs,
        "teacher_upstream_max_per_module": len(cfg.train_inputs),
        "teacher_upstream_max_total": len(cfg.train_inputs) * n_stages,
        "student_upstream_max_per_module": per_module_student,
        "student_upstream_max_total": per_module_student * n_stages,
    }


def sequential_optimize(program: InferRetrieveRank, cfg: OptimizerConfig,
                        config_digest: str = "") -> OptimizationResult:
    """Optimize the first in-context module inside the rank-free program,
    freeze its winning demos, then optimize the second module inside the
    full program. Emits a budget report with per-stage ledger deltas; a
    stage failure leaves earlier stages' results intact and recorded."""
    metric_k = parse_metric(cfg.metric)
    ledger = program.client.ledger
    stage_specs = [(program.infer, False), (program.rank, True)]

    current = program
    stages: list[StageResult] = []
    for module, use_rank in stage_specs:
        result = StageResult(
            module=module.name,
            student_backend=module.student.id,
            teacher_backend=module.teacher.id if module.teacher else "",
        )
        before = ledger.snapshot()
        try:
            traces = bootstrap_traces(
                current, cfg.train_inputs, use_rank=use_rank,
                filter_metric_k=metric_k if cfg.filter_traces_by_metric else None)
            result.num_usable_traces = len(usable_records(traces, module.name))
            candidates = sample_candidates(traces, cfg, module.name)
            best = select_best(current, module.name, candidates, cfg.validation,
                               metric_k, use_rank=use_rank, max_workers=cfg.max_workers)
            current = current.with_demos(module.name, best.demos)
            result.selected_candidate = best.id
            result.score = best.score
            result.zero_shot_score = candidates[0].score
            result.candidates = [
                {"id": c.id, "score": c.score, "num_demos": len(c.demos)} for c in candidates
            ]
        except Exception as exc:
            logger.error("stage %r failed: %s", module.name, exc)
            result.error = str(exc)
        result.ledger_delta = ledger.delta(before).to_dict()
        stages.append(result)

    budget = {
        "config": {
            "metric": cfg.metric,
            "rng_seed": cfg.rng_seed,
            "max_demos": cfg.max_demos,
            "config_digest": config_digest,
        },
        "expected": _expected_budget(cfg, len(stage_specs)),
        "stages": [s.to_dict() for s in stages],
    }
    return OptimizationResult(program=current, stages=stages, budget=budget)
