"""Prompt schemas: declarative signatures, rendering, and completion parsing.

A Signature is an instruction plus an ordered list of prefixed fields. It is
rendered to a deterministic zero-/few-shot prompt (see docs/prompt_format.md
for the byte-exact layout; the layout must stay stable because the call cache
is keyed on prompt bytes) and completions are parsed back into field values
by scanning for field prefixes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import yaml

from .errors import MissingInputField, MissingOutputField

INPUT = "input"
OUTPUT = "output"

RATIONALE_FIELD = "rationale"
RATIONALE_PREFIX = "Reasoning:"

FORMAT_HEADER = "Follow the following format."


@dataclass(frozen=True)
class FieldSpec:
    """One named, prefixed prompt field."""

    name: str
    prefix: str
    role: str
    description: str = ""

    def __post_init__(self):
        if not self.name or not self.name.isidentifier():
            raise ValueError(f"field name must be a non-empty identifier, got {self.name!r}")
        if not self.prefix:
            raise ValueError(f"field {self.name!r} has an empty prefix")
        if self.role not in (INPUT, OUTPUT):
            raise ValueError(f"field {self.name!r} has unknown role {self.role!r}")


@dataclass(frozen=True)
class Signature:
    """Instruction plus ordered fields; optionally chain-of-thought.

    When chain_of_thought is set, a synthetic rationale output field is
    rendered immediately before the first declared output field. Its content
    is auxiliary: parsing never requires it.
    """

    instruction: str
    fields: tuple[FieldSpec, ...]
    chain_of_thought: bool = False

    def __post_init__(self):
        if not self.instruction.strip():
            raise ValueError("signature instruction is empty")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate field names in signature: {names}")
        if RATIONALE_FIELD in names:
            raise ValueError(f"{RATIONALE_FIELD!r} is reserved for chain-of-thought")
        input_positions = [i for i, f in enumerate(self.fields) if f.role == INPUT]
        output_positions = [i for i, f in enumerate(self.fields) if f.role == OUTPUT]
        if not input_positions or not output_positions:
            raise ValueError("signature needs at least one input and one output field")
        if min(input_positions) > min(output_positions):
            raise ValueError("at least one input field must precede the first output field")

    @property
    def input_fields(self) -> tuple[FieldSpec, ...]:
        return tuple(f for f in self.fields if f.role == INPUT)

    @property
    def output_fields(self) -> tuple[FieldSpec, ...]:
        return tuple(f for f in self.fields if f.role == OUTPUT)

    def visible_fields(self) -> tuple[FieldSpec, ...]:
        """Declared fields with the synthetic rationale field spliced in."""
        if not self.chain_of_thought:
            return self.fields
        rationale = FieldSpec(RATIONALE_FIELD, RATIONALE_PREFIX, OUTPUT,
                              "think step by step before answering")
        first_out = min(i for i, f in enumerate(self.fields) if f.role == OUTPUT)
        return self.fields[:first_out] + (rationale,) + self.fields[first_out:]

    def visible_output_fields(self) -> tuple[FieldSpec, ...]:
        return tuple(f for f in self.visible_fields() if f.role == OUTPUT)

    def is_auxiliary(self, name: str) -> bool:
        return self.chain_of_thought and name == RATIONALE_FIELD


@dataclass(frozen=True)
class Demo:
    """One worked example: field name -> verbatim value."""

    values: Mapping[str, str] = field(default_factory=dict)


def validate_demo(sig: Signature, demo: Demo) -> None:
    """A demo must fill every input and every non-rationale output field."""
    visible = {f.name for f in sig.visible_fields()}
    for name in demo.values:
        if name not in visible:
            raise ValueError(f"demo value {name!r} is not a field of the signature")
    for f in sig.visible_fields():
        if sig.is_auxiliary(f.name):
            continue
        if f.name not in demo.values:
            raise ValueError(f"demo is missing value for field {f.name!r}")


def _legend_line(f: FieldSpec) -> str:
    return f"{f.prefix} {f.description}" if f.description else f"{f.prefix} ${{{f.name}}}"


def render_prompt(sig: Signature, demos: Iterable[Demo], input_values: Mapping[str, str]) -> str:
    """Render the full prompt text. Deterministic: same arguments, same bytes.

    Layout (blocks joined by blank lines): instruction, format header, field
    legend, one block per demo, then the query block whose final line is the
    prefix of the first unfilled output field, left open for the model.
    """
    for f in sig.input_fields:
        if f.name not in input_values:
            raise MissingInputField(f.name)

    visible = sig.visible_fields()
    blocks = [sig.instruction, FORMAT_HEADER, "\n".join(_legend_line(f) for f in visible)]

    for demo in demos:
        validate_demo(sig, demo)
        lines = [f"{f.prefix} {demo.values[f.name]}"
                 for f in visible if f.name in demo.values]
        blocks.append("\n".join(lines))

    query = [f"{f.prefix} {input_values[f.name]}" for f in sig.input_fields]
    open_field = sig.visible_output_fields()[0]
    query.append(open_field.prefix)
    blocks.append("\n".join(query))

    return "\n\n".join(blocks)


def _find_prefix(text: str, prefix: str, start: int) -> tuple[int, int]:
    """Earliest occurrence of prefix at a line start from `start`; falls back
    to a plain substring search. Returns (match_start, value_start) or (-1, -1)."""
    pat = re.compile(r"(?m)^[ \t]*" + re.escape(prefix))
    m = pat.search(text, start)
    if m:
        return m.start(), m.end()
    pos = text.find(prefix, start)
    if pos >= 0:
        return pos, pos + len(prefix)
    return -1, -1


def parse_completion(sig: Signature, completion: str) -> dict[str, str]:
    """Recover output field values from a raw model continuation.

    The prompt already emitted the first output field's prefix, so the first
    segment may start without it (when chain-of-thought is on, that first
    field is the rationale). Later fields are located by scanning for their
    prefixes in declaration order. An output field that cannot be located
    raises MissingOutputField; callers degrade to an empty module output
    rather than aborting.
    """
    outputs = sig.visible_output_fields()
    first = re.match(r"[ \t\n]*" + re.escape(outputs[0].prefix), completion)
    # (field, match_start, value_start) per located field
    segments = [(outputs[0], 0, first.end() if first else 0)]
    cursor = segments[0][2]
    for f in outputs[1:]:
        match_start, value_start = _find_prefix(completion, f.prefix, cursor)
        if match_start < 0:
            raise MissingOutputField(f.name)
        segments.append((f, match_start, value_start))
        cursor = value_start

    values: dict[str, str] = {}
    for i, (f, _, value_start) in enumerate(segments):
        end = segments[i + 1][1] if i + 1 < len(segments) else len(completion)
        values[f.name] = completion[value_start:end].strip()
    return values


def parse_label_list(raw: str) -> list[str]:
    """Split a completion into label strings.

    Splits on commas and newlines, trims whitespace and surrounding quotes,
    strips leading enumeration markers, drops empties, and deduplicates
    case-insensitively keeping the first occurrence. Idempotent.
    """
    out: list[str] = []
    seen: set[str] = set()
    for token in re.split(r"[,\n]", raw):
        token = token.strip().strip("\"'").strip()
        token = re.sub(r"^(?:\d+\s*[.)]|[-*•])\s*", "", token).strip()
        if not token:
            continue
        key = token.casefold()
        if key in seen:
            continue
        seen.add(key)
        out.append(token)
    return out


def render_completion(sig: Signature, values: Mapping[str, str]) -> str:
    """Build the completion a perfectly-formatted model would emit.

    Inverse fixture for parse_completion: first output value bare (its prefix
    is already in the prompt), later fields as prefix+value lines.
    """
    outputs = sig.visible_output_fields()
    lines = [values.get(outputs[0].name, "")]
    for f in outputs[1:]:
        if f.name in values:
            lines.append(f"{f.prefix} {values[f.name]}")
    return "\n".join(lines)


def signature_to_dict(sig: Signature) -> dict:
    return {
        "instruction": sig.instruction,
        "chain_of_thought": sig.chain_of_thought,
        "fields": [
            {"name": f.name, "prefix": f.prefix, "role": f.role, "description": f.description}
            for f in sig.fields
        ],
    }


def signature_from_dict(data: Mapping) -> Signature:
    fields = tuple(
        FieldSpec(f["name"], f["prefix"], f["role"], f.get("description", ""))
        for f in data["fields"]
    )
    return Signature(data["instruction"], fields, bool(data.get("chain_of_thought", False)))


def load_signature(path: str | Path) -> Signature:
    """Load a signature from a declarative YAML/JSON file."""
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text) if not text.lstrip().startswith("{") else json.loads(text)
    return signature_from_dict(data)


def _preset(instruction: str, fields: tuple[FieldSpec, ...]) -> Signature:
    return Signature(instruction, fields, chain_of_thought=True)


PRESETS: dict[str, Signature] = {
    "biodex-infer": _preset(
        "Given a snippet from a medical article, identify the adverse drug "
        "reactions affecting the patient. Always return reactions.",
        (
            FieldSpec("text", "Article:", INPUT),
            FieldSpec("output", "Reactions:", OUTPUT,
                      "list of comma-separated adverse drug reactions"),
        ),
    ),
    "biodex-rank": _preset(
        "Given a snippet from a medical article, pick the 10 most applicable "
        "adverse reactions from the options that are directly expressed in the snippet.",
        (
            FieldSpec("text", "Article:", INPUT),
            FieldSpec("options", "Options:", INPUT,
                      "List of comma-separated options to choose from"),
            FieldSpec("output", "Reactions:", OUTPUT,
                      "list of comma-separated adverse drug reactions"),
        ),
    ),
    "esco-infer": _preset(
        "Given a snippet from a job vacancy, identify all the ESCO job skills "
        "mentioned. Always return skills.",
        (
            FieldSpec("text", "Vacancy:", INPUT),
            FieldSpec("output", "Skills:", OUTPUT,
                      "list of comma-separated ESCO skills"),
        ),
    ),
    "esco-rank": _preset(
        "Given a snippet from a job vacancy, pick the 10 most applicable "
        "skills from the options that are directly expressed in the snippet.",
        (
            FieldSpec("text", "Vacancy:", INPUT),
            FieldSpec("options", "Options:", INPUT,
                      "List of comma-separated options to choose from"),
            FieldSpec("output", "Skills:", OUTPUT,
                      "list of comma-separated ESCO skills"),
        ),
    ),
}


def resolve_signature(ref: str | Mapping | Signature) -> Signature:
    """Accept a preset name, a file path, an inline mapping, or a Signature."""
    if isinstance(ref, Signature):
        return ref
    if isinstance(ref, Mapping):
        return signature_from_dict(ref)
    if ref in PRESETS:
        return PRESETS[ref]
    if Path(ref).exists():
        return load_signature(ref)
    raise ValueError(f"unknown signature {ref!r}: not a preset name or readable file")
