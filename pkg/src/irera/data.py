"""Dataset and ontology ingestion.

Datasets are line-delimited JSON records {"text": ..., "labels": [...]};
label names resolve to ids case-insensitively against the ontology. Ontology
files carry one label name per line, optionally "name,prior"; priors may
also come from a separate file keyed by name.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyDataset, MalformedRecord, PriorOutOfRange
from .retrieval import LabelOntology

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledExample:
    """One document and its gold label ids. Evaluation examples must have at
    least one gold label; training inputs may have none."""

    text: str
    gold: frozenset[int] = frozenset()


@dataclass
class DatasetLoad:
    examples: list[LabeledExample]
    unknown_labels: Counter = field(default_factory=Counter)

    @property
    def unknown_count(self) -> int:
        return sum(self.unknown_labels.values())


def load_dataset(path: str | Path, ontology: LabelOntology,
                 require_labels: bool = True) -> DatasetLoad:
    """Parse a JSONL dataset, resolving gold names to label ids.

    Unknown gold names are dropped and counted per file. With require_labels,
    a record whose resolved gold set is empty is malformed (evaluation needs
    at least one gold label per example).
    """
    examples: list[LabeledExample] = []
    unknown: Counter = Counter()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(lineno, f"invalid JSON ({exc.msg})")
        if not isinstance(record, dict) or not isinstance(record.get("text"), str):
            raise MalformedRecord(lineno, "record must be an object with a string 'text'")
        if not record["text"].strip():
            raise MalformedRecord(lineno, "'text' is empty")
        labels = record.get("labels", [])
        if labels is None:
            labels = []
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise MalformedRecord(lineno, "'labels' must be a list of strings")
        gold = set()
        for name in labels:
            label_id = ontology.id_of(name)
            if label_id is None:
                unknown[name] += 1
            else:
                gold.add(label_id)
        if require_labels and not gold:
            raise MalformedRecord(lineno, "labeled example resolved to an empty gold set")
        examples.append(LabeledExample(record["text"], frozenset(gold)))
    if not examples:
        raise EmptyDataset(f"{path}: no records")
    if unknown:
        logger.warning("%s: dropped %d unknown gold label name(s): %s",
                       path, sum(unknown.values()),
                       ", ".join(f"{n!r}x{c}" for n, c in unknown.most_common(5)))
    return DatasetLoad(examples, unknown)


def _split_name_prior(line: str) -> tuple[str, float | None]:
    """Split on the last comma when the tail parses as a float, so label
    names containing commas survive."""
    if "," in line:
        head, _, tail = line.rpartition(",")
        try:
            return head.strip(), float(tail.strip())
        except ValueError:
            pass
    return line.strip(), None


def _load_priors_file(path: str | Path) -> dict[str, float]:
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return {str(k): float(v) for k, v in data.items()}
    priors: dict[str, float] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        name, prior = _split_name_prior(line)
        if prior is None:
            raise ValueError(f"{path}: line {line!r} has no prior value")
        priors[name] = prior
    return priors


def load_ontology(labels_path: str | Path, priors_path: str | Path | None = None) -> LabelOntology:
    """Load label names (ids assigned by file order) and optional priors."""
    names: list[str] = []
    inline: dict[str, float] = {}
    for line in Path(labels_path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, prior = _split_name_prior(line)
        names.append(name)
        if prior is not None:
            inline[name] = prior
    if not names:
        raise EmptyDataset(f"{labels_path}: no labels")

    priors = dict(inline)
    if priors_path is not None:
        file_priors = _load_priors_file(priors_path)
        known = {n.casefold() for n in names}
        unknown = [n for n in file_priors if n.casefold() not in known]
        if unknown:
            logger.warning("%s: %d prior name(s) not in the ontology (ignored)",
                           priors_path, len(unknown))
        priors.update({n: p for n, p in file_priors.items() if n.casefold() in known})

    for name, value in priors.items():
        if not 0.0 <= value <= 1.0:
            raise PriorOutOfRange(f"prior for {name!r} is {value}, outside [0, 1]")
    return LabelOntology.from_names(names, priors)
