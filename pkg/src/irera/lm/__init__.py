from .backends import (
    BackendParams,
    BackendSpec,
    CallableChat,
    CallableEmbed,
    CHAT_HTTP,
    CHAT_SCRIPTED,
    EMBED_HTTP,
    EMBED_SCRIPTED,
    HttpChat,
    HttpEmbed,
    LMClient,
    TranscriptChat,
    build_runtime,
    prompt_digest,
)
from .cache import DiskCache, cache_key
from .ledger import (
    CallLedger,
    LedgerSnapshot,
    ROLE_RETRIEVER,
    ROLE_STUDENT,
    ROLE_TEACHER,
)
from .mocks import (
    OneHotEmbedder,
    glass_box_chat,
    scripted_chat_spec,
    scripted_embed_spec,
)

__all__ = [
    "BackendParams",
    "BackendSpec",
    "CallableChat",
    "CallableEmbed",
    "CHAT_HTTP",
    "CHAT_SCRIPTED",
    "EMBED_HTTP",
    "EMBED_SCRIPTED",
    "HttpChat",
    "HttpEmbed",
    "LMClient",
    "TranscriptChat",
    "build_runtime",
    "prompt_digest",
    "DiskCache",
    "cache_key",
    "CallLedger",
    "LedgerSnapshot",
    "ROLE_RETRIEVER",
    "ROLE_STUDENT",
    "ROLE_TEACHER",
    "OneHotEmbedder",
    "glass_box_chat",
    "scripted_chat_spec",
    "scripted_embed_spec",
]
