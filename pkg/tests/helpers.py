"""Shared fixtures-in-code: synthetic ontologies, scripted engines, oracles."""

from __future__ import annotations

import random

import numpy as np

from irera.data import LabeledExample
from irera.lm import (
    CallLedger,
    DiskCache,
    LMClient,
    OneHotEmbedder,
    glass_box_chat,
    scripted_chat_spec,
    scripted_embed_spec,
)
from irera.program import InContextModule, InferRetrieveRank
from irera.retrieval import EmbeddingIndex, LabelOntology
from irera.signatures import FieldSpec, Signature

# Non-chain-of-thought signatures for the synthetic task: the glass-box mock
# answers with bare label lists, which parse as the first output field.
INFER_SIG = Signature(
    "List the labels mentioned by the document.",
    (FieldSpec("text", "Text:", "input"),
     FieldSpec("output", "Labels:", "output", "comma-separated labels")),
)
RANK_SIG = Signature(
    "Pick the most applicable labels from the options.",
    (FieldSpec("text", "Text:", "input"),
     FieldSpec("options", "Options:", "input", "comma-separated options"),
     FieldSpec("output", "Labels:", "output", "comma-separated labels")),
)


def label_names(n: int = 100) -> list[str]:
    return [f"label_{i}" for i in range(n)]


def make_dataset(n_examples: int, seed: int = 0, *, n_labels: int = 100,
                 min_gold: int = 1, max_gold: int = 5, id_low: int = 0) -> list[LabeledExample]:
    """Synthetic documents with known gold sets drawn from [id_low, n_labels)."""
    rng = random.Random(seed)
    out = []
    for i in range(n_examples):
        size = rng.randint(min_gold, max_gold)
        gold = frozenset(rng.sample(range(id_low, n_labels), size))
        text = f"document {i} touches on topics {'/'.join(str(g) for g in sorted(gold))}."
        out.append(LabeledExample(text, gold))
    return out


def fresh_client(cache_dir=None, max_concurrency: int = 4) -> LMClient:
    return LMClient(DiskCache(cache_dir), CallLedger(),
                    max_concurrency=max_concurrency, sleep=lambda s: None)


def build_glass_box_engine(examples, *, n_labels: int = 100, cache_dir=None,
                           num_options: int = 50, prior_strength: float = 0.0,
                           infer_student=None, rank_student=None,
                           infer_teacher=None, rank_teacher=None):
    """A fully scripted engine: glass-box students/teachers by default, the
    one-hot embedder, and distinct backend ids per module and role so ledger
    counters attribute cleanly."""
    names = label_names(n_labels)
    ontology = LabelOntology(names)
    embedder = OneHotEmbedder(names)
    index = EmbeddingIndex(embedder.embed(names))
    client = fresh_client(cache_dir)

    gold_mock = glass_box_chat(examples, ontology)
    runtimes = {
        "infer-student": infer_student or gold_mock,
        "rank-student": rank_student or gold_mock,
        "infer-teacher": infer_teacher or gold_mock,
        "rank-teacher": rank_teacher or gold_mock,
    }
    for backend_id, runtime in runtimes.items():
        client.register(backend_id, runtime)
    client.register("one-hot", embedder)

    program = InferRetrieveRank(
        infer=InContextModule("infer", INFER_SIG, scripted_chat_spec("infer-student"),
                              scripted_chat_spec("infer-teacher")),
        rank=InContextModule("rank", RANK_SIG, scripted_chat_spec("rank-student"),
                             scripted_chat_spec("rank-teacher")),
        ontology=ontology, index=index, embedder=scripted_embed_spec("one-hot"),
        client=client, prior_strength=prior_strength, num_options=num_options)
    return program


def random_unit_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    matrix = rng.normal(size=(rows, dim))
    return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)


# -- independent oracles (brute force, kept free of library scoring code) -------


def oracle_max_dot(matrix: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Double loop over labels x queries."""
    out = np.empty(matrix.shape[0])
    for i in range(matrix.shape[0]):
        best = -np.inf
        for q in range(queries.shape[0]):
            acc = 0.0
            for k in range(matrix.shape[1]):
                acc += float(matrix[i, k]) * float(queries[q, k])
            best = max(best, acc)
        out[i] = best
    return out


def oracle_apply_prior(scores, priors, strength: float) -> np.ndarray:
    import math

    return np.array([s * math.log10(strength * p + 10.0) for s, p in zip(scores, priors)])


def oracle_rank(scores) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def oracle_rp_at_k(orders, golds, k: int) -> float:
    """Exhaustive evaluation of the rank-precision formula via an explicit
    relevance table."""
    total = 0.0
    for order, gold in zip(orders, golds):
        rel = [1 if order[j] in gold else 0 for j in range(min(k, len(order)))]
        total += sum(rel) / min(k, len(gold))
    return total / len(orders)
