"""Deterministic scripted backends used as test oracles and offline stand-ins.

The glass-box chat mock answers any prompt that contains a known example's
text with that example's gold label names, so a correctly wired pipeline
must score perfectly against it. The one-hot embedder maps each vocabulary
name to its own basis vector, making retrieval geometry exact.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import UnknownInput
from .backends import BackendParams, BackendSpec, CallableChat, CHAT_SCRIPTED, EMBED_SCRIPTED

OPTIONS_PREFIX = "Options:"


def scripted_chat_spec(backend_id: str, n: int = 1, **params) -> BackendSpec:
    return BackendSpec(id=backend_id, kind=CHAT_SCRIPTED, model_name=backend_id,
                       params=BackendParams(n=n, **params))


def scripted_embed_spec(backend_id: str) -> BackendSpec:
    return BackendSpec(id=backend_id, kind=EMBED_SCRIPTED, model_name=backend_id)


class OneHotEmbedder:
    """Maps each vocabulary name (case-insensitively) to a basis vector.

    Dimension is len(vocabulary) + 1; the extra axis absorbs unknown texts so
    they are orthogonal to every real name and the unit-norm contract holds.
    """

    def __init__(self, vocabulary: Sequence[str]):
        self.vocabulary = list(vocabulary)
        self.dim = len(self.vocabulary) + 1
        self._index = {name.casefold(): i for i, name in enumerate(self.vocabulary)}

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            col = self._index.get(text.strip().casefold(), self.dim - 1)
            out[row, col] = 1.0
        return out


def _last_options(prompt: str, after: int) -> list[str] | None:
    """Option names from the last Options: line at/after `after`, if any."""
    found = None
    for line in prompt[after:].splitlines():
        stripped = line.strip()
        if stripped.startswith(OPTIONS_PREFIX):
            found = stripped[len(OPTIONS_PREFIX):].strip()
    if found is None:
        return None
    return [name.strip() for name in found.split(",") if name.strip()]


def glass_box_chat(examples, ontology) -> CallableChat:
    """Scripted chat runtime that always answers with the gold labels.

    The current query is identified as the example whose text occurs last in
    the prompt (few-shot demos may embed other examples' texts earlier). When
    an options line follows the query text the reply is filtered to the
    presented options, in option order (rank behavior); otherwise it is the
    comma-join of all gold names in label-id order (infer behavior).

    Assumes label names contain no commas, which holds for the synthetic
    fixtures this oracle is meant for.
    """
    entries = [(ex.text, sorted(ex.gold)) for ex in examples]

    def answer(prompt: str) -> str:
        best_pos, best_gold = -1, None
        for text, gold in entries:
            pos = prompt.rfind(text)
            if pos > best_pos:
                best_pos, best_gold = pos, gold
        if best_gold is None:
            raise UnknownInput("prompt does not contain any known example text")
        gold_names = [ontology.name_of(i) for i in best_gold]
        options = _last_options(prompt, best_pos)
        if options is None:
            return ", ".join(gold_names)
        gold_set = {name.casefold() for name in gold_names}
        kept = [name for name in options if name.casefold() in gold_set]
        return ", ".join(kept)

    return CallableChat(answer)
