"""Infer-Retrieve-Rank: extreme multi-label classification from frozen
language models and a frozen dense retriever, with automatic few-shot
prompt optimization."""

from .data import LabeledExample, load_dataset, load_ontology
from .evaluation import MetricReport, evaluate, rp_at_k, verify_budget, verify_inference_calls
from .optimizer import OptimizerConfig, sequential_optimize
from .program import (
    InContextModule,
    InferRetrieveRank,
    Prediction,
    Trace,
    baseline_exact_match,
    baseline_naive_retrieve,
    baseline_prior,
)
from .retrieval import (
    EmbeddingIndex,
    LabelOntology,
    ScoredRanking,
    apply_prior,
    rank_all,
    retrieve,
    score_labels,
)
from .signatures import Demo, FieldSpec, Signature, parse_label_list, render_prompt

__version__ = "0.1.0"

__all__ = [
    "LabeledExample",
    "load_dataset",
    "load_ontology",
    "MetricReport",
    "evaluate",
    "rp_at_k",
    "verify_budget",
    "verify_inference_calls",
    "OptimizerConfig",
    "sequential_optimize",
    "InContextModule",
    "InferRetrieveRank",
    "Prediction",
    "Trace",
    "baseline_exact_match",
    "baseline_naive_retrieve",
    "baseline_prior",
    "EmbeddingIndex",
    "LabelOntology",
    "ScoredRanking",
    "apply_prior",
    "rank_all",
    "retrieve",
    "score_labels",
    "Demo",
    "FieldSpec",
    "Signature",
    "parse_label_list",
    "render_prompt",
    "__version__",
]
