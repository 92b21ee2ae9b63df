"""The Infer-Retrieve-Rank program, its ablation, and the baselines.

A forward pass makes exactly one student chat call per in-context module and
one embedding batch: Infer guesses query terms from the document, Retrieve
grounds them in the label space by max-cosine with prior reweighting, Rank
reorders the top retrieved options. Parse failures degrade to empty module
output; the final ranking is always a complete permutation of label ids.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MissingOutputField
from .lm.backends import BackendSpec, LMClient
from .lm.ledger import ROLE_STUDENT, ROLE_TEACHER
from .retrieval import EmbeddingIndex, LabelOntology, ScoredRanking, rank_all, retrieve
from .signatures import (
    Demo,
    Signature,
    parse_completion,
    parse_label_list,
    render_prompt,
    signature_from_dict,
    signature_to_dict,
)

INFER = "infer"
RETRIEVE = "retrieve"
RANK = "rank"

OPTIONS_FIELD = "options"

DEFAULT_NUM_OPTIONS = 50


@dataclass(frozen=True)
class InContextModule:
    """A signature bound to a student backend, optional teacher, and demos."""

    name: str
    signature: Signature
    student: BackendSpec
    teacher: BackendSpec | None = None
    demos: tuple[Demo, ...] = ()
    signature_name: str = ""

    def with_demos(self, demos: Sequence[Demo]) -> "InContextModule":
        return dataclasses.replace(self, demos=tuple(demos))

    def backend_for(self, role: str) -> BackendSpec:
        if role == ROLE_TEACHER:
            if self.teacher is None:
                raise ValueError(f"module {self.name!r} has no teacher backend")
            return self.teacher
        return self.student


@dataclass
class ModuleRecord:
    """Captured input/output field values from one in-context module call."""

    module: str
    inputs: dict[str, str]
    outputs: dict[str, str]
    ok: bool = True


@dataclass
class Trace:
    """Per-module records from one forward pass."""

    records: list[ModuleRecord] = field(default_factory=list)

    def get(self, module: str) -> ModuleRecord | None:
        for record in self.records:
            if record.module == module:
                return record
        return None


@dataclass
class Prediction:
    """A complete ranking over all label ids plus intermediate artifacts."""

    final_order: np.ndarray
    queries: list[str] = field(default_factory=list)
    options: list[int] = field(default_factory=list)
    rank_output: list[int] = field(default_factory=list)
    rationales: list[str] = field(default_factory=list)
    failed: bool = False
    unmatched_rank_outputs: int = 0


def _normalize_name(name: str) -> str:
    return " ".join(name.split()).casefold()


class InferRetrieveRank:
    """Program state: the two in-context modules plus the frozen retriever.

    Immutable during evaluation; `with_demos` / `with_hyperparams` return
    modified copies so optimizer stages never mutate earlier results.
    """

    def __init__(self, *, infer: InContextModule, rank: InContextModule,
                 ontology: LabelOntology, index: EmbeddingIndex,
                 embedder: BackendSpec, client: LMClient,
                 prior_strength: float = 0.0, num_options: int = DEFAULT_NUM_OPTIONS):
        if len(index) != len(ontology):
            raise ValueError("index and ontology disagree on label count")
        if not any(f.name == OPTIONS_FIELD and f.role == "input" for f in rank.signature.fields):
            raise ValueError(f"rank signature needs an input field named {OPTIONS_FIELD!r}")
        if num_options < 1:
            raise ValueError("num_options must be >= 1")
        self.infer = infer
        self.rank = rank
        self.ontology = ontology
        self.index = index
        self.embedder = embedder
        self.client = client
        self.prior_strength = prior_strength
        self.num_options = num_options

    def modules(self) -> dict[str, InContextModule]:
        return {self.infer.name: self.infer, self.rank.name: self.rank}

    def with_demos(self, module_name: str, demos: Sequence[Demo]) -> "InferRetrieveRank":
        kwargs = dict(infer=self.infer, rank=self.rank, ontology=self.ontology,
                      index=self.index, embedder=self.embedder, client=self.client,
                      prior_strength=self.prior_strength, num_options=self.num_options)
        if module_name == self.infer.name:
            kwargs["infer"] = self.infer.with_demos(demos)
        elif module_name == self.rank.name:
            kwargs["rank"] = self.rank.with_demos(demos)
        else:
            raise ValueError(f"unknown module {module_name!r}")
        return InferRetrieveRank(**kwargs)

    def with_hyperparams(self, *, prior_strength: float | None = None,
                         num_options: int | None = None) -> "InferRetrieveRank":
        return InferRetrieveRank(
            infer=self.infer, rank=self.rank, ontology=self.ontology, index=self.index,
            embedder=self.embedder, client=self.client,
            prior_strength=self.prior_strength if prior_strength is None else prior_strength,
            num_options=self.num_options if num_options is None else num_options)

    # -- module execution ---------------------------------------------------

    def _call_module(self, module: InContextModule, input_values: dict[str, str],
                     *, role: str, zero_shot: bool) -> tuple[list[dict[str, str]], bool]:
        """One chat call; returns parsed fields per completion and an ok flag
        (at least one completion parsed)."""
        demos = () if zero_shot else module.demos
        prompt = render_prompt(module.signature, demos, input_values)
        backend = module.backend_for(role)
        completions = self.client.complete(backend, role, prompt)
        self.client.ledger.record_invocation(module.name)
        parsed = []
        for completion in completions:
            try:
                parsed.append(parse_completion(module.signature, completion))
            except MissingOutputField:
                continue
        return parsed, bool(parsed)

    def run_infer(self, text: str, *, role: str = ROLE_STUDENT, zero_shot: bool = False,
                  trace: Trace | None = None) -> tuple[list[str], list[str], bool]:
        """Predict query terms for a document. Returns (queries, rationales, ok);
        queries are merged across the n completions by first appearance."""
        inputs = {self.infer.signature.input_fields[0].name: text}
        parsed, ok = self._call_module(self.infer, inputs, role=role, zero_shot=zero_shot)
        queries: list[str] = []
        seen: set[str] = set()
        rationales: list[str] = []
        for fields in parsed:
            for f in self.infer.signature.visible_output_fields():
                if self.infer.signature.is_auxiliary(f.name):
                    if fields.get(f.name):
                        rationales.append(fields[f.name])
                    continue
                for label in parse_label_list(fields.get(f.name, "")):
                    key = label.casefold()
                    if key not in seen:
                        seen.add(key)
                        queries.append(label)
        if trace is not None:
            trace.records.append(ModuleRecord(self.infer.name, inputs,
                                              parsed[0] if parsed else {}, ok))
        return queries, rationales, ok

    def run_rank(self, text: str, option_ids: Sequence[int], *, role: str = ROLE_STUDENT,
                 zero_shot: bool = False, trace: Trace | None = None
                 ) -> tuple[list[int], list[str], int, bool]:
        """Rerank the presented options. Returns (matched ids in completion
        order, rationales, unmatched count, ok). Output strings are matched to
        options by whitespace-normalized case-insensitive equality; unmatched
        strings are dropped and counted."""
        sig = self.rank.signature
        option_names = [self.ontology.name_of(i) for i in option_ids]
        inputs = {sig.input_fields[0].name: text, OPTIONS_FIELD: ", ".join(option_names)}
        parsed, ok = self._call_module(self.rank, inputs, role=role, zero_shot=zero_shot)
        by_name: dict[str, int] = {}
        for i, name in zip(option_ids, option_names):
            by_name.setdefault(_normalize_name(name), i)
        matched: list[int] = []
        matched_set: set[int] = set()
        unmatched = 0
        rationales: list[str] = []
        for fields in parsed:
            for f in sig.visible_output_fields():
                if sig.is_auxiliary(f.name):
                    if fields.get(f.name):
                        rationales.append(fields[f.name])
                    continue
                for label in parse_label_list(fields.get(f.name, "")):
                    label_id = by_name.get(_normalize_name(label))
                    if label_id is None:
                        unmatched += 1
                    elif label_id not in matched_set:
                        matched_set.add(label_id)
                        matched.append(label_id)
        if trace is not None:
            trace.records.append(ModuleRecord(self.rank.name, inputs,
                                              parsed[0] if parsed else {}, ok))
        return matched, rationales, unmatched, ok

    def _retrieve(self, queries: Sequence[str]) -> ScoredRanking:
        ranking = retrieve(queries, lambda texts: self.client.embed(self.embedder, texts),
                           self.ontology, self.index, self.prior_strength)
        self.client.ledger.record_invocation(RETRIEVE)
        return ranking

    # -- forward passes -----------------------------------------------------

    def forward(self, text: str, *, role: str = ROLE_STUDENT, zero_shot: bool = False,
                trace: Trace | None = None, use_rank: bool = True) -> Prediction:
        """Full Infer-Retrieve-Rank pass (or the Infer-Retrieve ablation with
        use_rank=False). The final ranking is the matched Rank output, then
        the remaining options in retrieval order, then the retrieval tail."""
        queries, rationales, infer_ok = self.run_infer(
            text, role=role, zero_shot=zero_shot, trace=trace)
        ranking = self._retrieve(queries)
        options = [int(i) for i in ranking.order[:self.num_options]]

        matched: list[int] = []
        unmatched = 0
        rank_ok = True
        if use_rank:
            matched, rank_rationales, unmatched, rank_ok = self.run_rank(
                text, options, role=role, zero_shot=zero_shot, trace=trace)
            rationales = rationales + rank_rationales

        matched_set = set(matched)
        head = matched + [i for i in options if i not in matched_set]
        final_order = np.concatenate([
            np.asarray(head, dtype=ranking.order.dtype),
            ranking.order[self.num_options:],
        ]) if head else ranking.order.copy()

        return Prediction(
            final_order=final_order,
            queries=queries,
            options=options,
            rank_output=matched,
            rationales=rationales,
            failed=not (infer_ok and rank_ok),
            unmatched_rank_outputs=unmatched,
        )

    def forward_infer_retrieve(self, text: str, *, role: str = ROLE_STUDENT,
                               zero_shot: bool = False, trace: Trace | None = None) -> Prediction:
        return self.forward(text, role=role, zero_shot=zero_shot, trace=trace, use_rank=False)

    def fallback_prediction(self) -> Prediction:
        """Degenerate ranking used when a forward pass fails outright."""
        return Prediction(final_order=np.arange(len(self.ontology)), failed=True)


# -- baselines ----------------------------------------------------------------


def prior_order(ontology: LabelOntology) -> np.ndarray:
    return np.argsort(-ontology.priors, kind="stable")


def baseline_prior(ontology: LabelOntology) -> Prediction:
    """Rank labels by descending prior, ties by ascending id."""
    return Prediction(final_order=prior_order(ontology))


def baseline_exact_match(ontology: LabelOntology, text: str) -> Prediction:
    """Labels whose names occur case-insensitively in the text, by first
    occurrence position (ties by id), then all others in prior order."""
    haystack = text.casefold()
    found = []
    for label_id, name in enumerate(ontology.names):
        pos = haystack.find(name.casefold())
        if pos >= 0:
            found.append((pos, label_id))
    found.sort()
    head = [label_id for _, label_id in found]
    head_set = set(head)
    tail = [int(i) for i in prior_order(ontology) if int(i) not in head_set]
    return Prediction(final_order=np.asarray(head + tail, dtype=np.int64))


def baseline_naive_retrieve(ontology: LabelOntology, index: EmbeddingIndex,
                            embed_fn, text: str) -> Prediction:
    """Embed the whole document and retrieve with no prior reweighting."""
    queries = [text] if text.strip() else []
    ranking = retrieve(queries, embed_fn, ontology, index, strength=0.0)
    return Prediction(final_order=ranking.order.copy(), queries=queries)


def degenerate_prediction(num_labels: int) -> Prediction:
    return Prediction(final_order=np.arange(num_labels), failed=True)


# -- compiled-program artifact -------------------------------------------------


ARTIFACT_FORMAT = "irera-program"
ARTIFACT_VERSION = 1


def program_artifact(program: InferRetrieveRank, config_digest: str = "") -> dict:
    """Serializable snapshot of the compiled program: per module the
    signature, selected demos (verbatim), and backend ids, plus the
    retrieval hyperparameters and the digest of the producing config."""
    def module_entry(module: InContextModule) -> dict:
        return {
            "signature_preset": module.signature_name,
            "signature": signature_to_dict(module.signature),
            "demos": [dict(d.values) for d in module.demos],
            "student": module.student.id,
            "teacher": module.teacher.id if module.teacher else None,
            "n": module.student.params.n,
        }

    return {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "config_digest": config_digest,
        "prior_strength": program.prior_strength,
        "num_options": program.num_options,
        "modules": {
            program.infer.name: module_entry(program.infer),
            program.rank.name: module_entry(program.rank),
        },
    }


def artifact_bytes(artifact: dict) -> bytes:
    return (json.dumps(artifact, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def save_artifact(path: str | Path, artifact: dict) -> str:
    """Write the artifact; returns its content digest."""
    raw = artifact_bytes(artifact)
    Path(path).write_bytes(raw)
    return hashlib.sha256(raw).hexdigest()


def load_artifact(path: str | Path) -> dict:
    artifact = json.loads(Path(path).read_text(encoding="utf-8"))
    if artifact.get("format") != ARTIFACT_FORMAT or artifact.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"{path}: not a version-{ARTIFACT_VERSION} {ARTIFACT_FORMAT} artifact")
    return artifact


def apply_artifact(program: InferRetrieveRank, artifact: dict) -> InferRetrieveRank:
    """Rebuild program state (signatures, demos, hyperparameters) from an
    artifact, keeping the live backends and retriever."""
    def rebuild(module: InContextModule) -> InContextModule:
        entry = artifact["modules"][module.name]
        return dataclasses.replace(
            module,
            signature=signature_from_dict(entry["signature"]),
            signature_name=entry.get("signature_preset", ""),
            demos=tuple(Demo(dict(v)) for v in entry["demos"]),
        )

    return InferRetrieveRank(
        infer=rebuild(program.infer),
        rank=rebuild(program.rank),
        ontology=program.ontology,
        index=program.index,
        embedder=program.embedder,
        client=program.client,
        prior_strength=float(artifact["prior_strength"]),
        num_options=int(artifact["num_options"]),
    )
