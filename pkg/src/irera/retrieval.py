"""Label ontology, embedding index, and dense retrieval over all labels.

Scoring is brute-force dense cosine (no ANN): every label row against every
query, take the per-label maximum, reweight by label priors, sort. The index
is built once, memory-resident, and immutable afterwards.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import (
    DimensionMismatch,
    DuplicateLabelName,
    EmptyQuerySet,
    NegativePriorStrength,
    NonFiniteScore,
    PriorOutOfRange,
)

INDEX_MAGIC = b"XMCE"
INDEX_VERSION = 1

UNIT_NORM_TOL = 1e-6

EmbedFn = Callable[[Sequence[str]], np.ndarray]


class LabelOntology:
    """The closed label space: dense ids, names, and per-label priors.

    Names are unique case-insensitively; ids are contiguous from 0 in the
    order given; missing priors default to 0 so prior reweighting multiplies
    them by exactly 1.
    """

    def __init__(self, names: Sequence[str], priors: Sequence[float] | None = None):
        self.names: tuple[str, ...] = tuple(names)
        if priors is None:
            self.priors = np.zeros(len(self.names))
        else:
            self.priors = np.asarray(priors, dtype=np.float64)
        if self.priors.shape != (len(self.names),):
            raise ValueError("priors length must match label count")
        bad = [(n, p) for n, p in zip(self.names, self.priors) if not 0.0 <= p <= 1.0]
        if bad:
            raise PriorOutOfRange(f"priors outside [0, 1]: {bad[:5]}")
        self._by_name: dict[str, int] = {}
        for i, name in enumerate(self.names):
            key = name.casefold()
            if key in self._by_name:
                raise DuplicateLabelName(f"label {name!r} duplicates id {self._by_name[key]}")
            self._by_name[key] = i

    @classmethod
    def from_names(cls, names: Sequence[str], priors_by_name: Mapping[str, float] | None = None):
        if priors_by_name is None:
            return cls(names)
        fold = {k.casefold(): v for k, v in priors_by_name.items()}
        return cls(names, [fold.get(n.casefold(), 0.0) for n in names])

    def __len__(self) -> int:
        return len(self.names)

    def name_of(self, label_id: int) -> str:
        return self.names[label_id]

    def id_of(self, name: str) -> int | None:
        return self._by_name.get(name.casefold())


class EmbeddingIndex:
    """Unit-norm label embeddings, one row per ontology label.

    Rows are stored float32 (the on-disk format) and upcast to float64 once
    for scoring.
    """

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2:
            raise ValueError("index matrix must be 2-D")
        norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
        off = np.abs(norms - 1.0)
        if off.size and off.max() > UNIT_NORM_TOL:
            raise ValueError(f"index rows must be unit-norm (worst deviation {off.max():.2e})")
        self.matrix = matrix
        self._matrix64 = matrix.astype(np.float64)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def build(cls, ontology: LabelOntology, embed_fn: EmbedFn,
              texts: Sequence[str] | None = None, batch_size: int = 256) -> "EmbeddingIndex":
        """Embed one text per label (names by default) in ontology order."""
        rows = list(texts) if texts is not None else list(ontology.names)
        if len(rows) != len(ontology):
            raise ValueError(f"need {len(ontology)} texts, got {len(rows)}")
        chunks = [np.asarray(embed_fn(rows[i:i + batch_size]), dtype=np.float64)
                  for i in range(0, len(rows), batch_size)]
        return cls(np.vstack(chunks))

    def save(self, path: str | Path) -> None:
        """Little-endian binary: "XMCE", u32 version, u32 rows, u32 dim, then
        row-major float32 data aligned to ontology order."""
        rows, dim = self.matrix.shape
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIII", INDEX_MAGIC, INDEX_VERSION, rows, dim))
            fh.write(np.ascontiguousarray(self.matrix, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingIndex":
        raw = Path(path).read_bytes()
        header = struct.calcsize("<4sIII")
        if len(raw) < header:
            raise ValueError(f"{path}: too short to be an embedding index")
        magic, version, rows, dim = struct.unpack_from("<4sIII", raw)
        if magic != INDEX_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != INDEX_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        expected = header + rows * dim * 4
        if len(raw) != expected:
            raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
        matrix = np.frombuffer(raw, dtype="<f4", offset=header).reshape(rows, dim)
        return cls(matrix)


@dataclass(frozen=True)
class ScoredRanking:
    """Scores over all labels plus the induced permutation (descending score,
    ties by ascending label id)."""

    scores: np.ndarray
    order: np.ndarray

    def __post_init__(self):
        if self.scores.shape != self.order.shape:
            raise ValueError("scores and order must have equal length")


def score_labels(index: EmbeddingIndex, query_vectors: np.ndarray) -> np.ndarray:
    """s_i = max over queries of cosine(label_i, query); unit vectors make
    the dot product the cosine."""
    queries = np.asarray(query_vectors, dtype=np.float64)
    if queries.ndim == 1:
        queries = queries[None, :]
    if queries.shape[0] == 0:
        raise EmptyQuerySet("score_labels needs at least one query vector")
    if queries.shape[1] != index.dim:
        raise DimensionMismatch(
            f"queries have dimension {queries.shape[1]}, index has {index.dim}")
    return kernels.max_dot(index._matrix64, np.ascontiguousarray(queries))


def apply_prior(scores: np.ndarray, priors: np.ndarray, strength: float) -> np.ndarray:
    """Reweight similarities by label priors: score * log10(strength * prior + 10).

    strength 0 multiplies by log10(10) = 1 exactly, leaving scores bit-identical.
    """
    if strength < 0:
        raise NegativePriorStrength(f"prior strength must be >= 0, got {strength}")
    scores = np.asarray(scores, dtype=np.float64)
    priors = np.asarray(priors, dtype=np.float64)
    if scores.shape != priors.shape:
        raise ValueError(f"scores {scores.shape} and priors {priors.shape} differ")
    return scores * kernels.prior_multiplier(priors, float(strength))


def rank_all(scores: np.ndarray) -> ScoredRanking:
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise NonFiniteScore("ranking requires finite scores")
    return ScoredRanking(scores=scores, order=kernels.rank_order(scores))


def retrieve(queries: Sequence[str], embed_fn: EmbedFn, ontology: LabelOntology,
             index: EmbeddingIndex, strength: float) -> ScoredRanking:
    """Embed queries and rank every label by prior-reweighted max cosine.

    With no queries there is nothing to score: s = 0 everywhere and the
    result degenerates to the tie order 0, 1, 2, ... (the prior multiplier
    cannot break zero scores).
    """
    if len(index) != len(ontology):
        raise ValueError("index and ontology disagree on label count")
    if not queries:
        return rank_all(np.zeros(len(ontology)))
    vectors = np.asarray(embed_fn(list(queries)), dtype=np.float64)
    scores = score_labels(index, vectors)
    return rank_all(apply_prior(scores, ontology.priors, strength))
