"""Content-addressed disk cache: one file per entry, filename = hex digest."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any


def cache_key(kind: str, backend_id: str, model_name: str, params: dict, content: str) -> str:
    """Digest of the full logical request. Any byte difference in the prompt
    (or embedding input) changes the key."""
    payload = json.dumps(
        {"kind": kind, "backend": backend_id, "model": model_name,
         "params": params, "content": content},
        sort_keys=True, ensure_ascii=False, separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class DiskCache:
    """Stores one JSON value per key under a directory.

    Writes are atomic (temp file + rename) so concurrent callers never read a
    partial entry. With root=None the cache lives in memory only.
    """

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root is not None else None
        self._memory: dict[str, str] = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key  # type: ignore[operator]

    def get(self, key: str) -> Any | None:
        if self.root is None:
            raw = self._memory.get(key)
            return json.loads(raw) if raw is not None else None
        path = self._path(key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def put(self, key: str, value: Any) -> None:
        raw = json.dumps(value, ensure_ascii=False)
        if self.root is None:
            self._memory[key] = raw
            return
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(raw)
            os.replace(tmp, self._path(key))
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def entries(self) -> list[tuple[str, int]]:
        """(digest, size in bytes) for every entry, sorted by digest."""
        if self.root is None:
            return sorted((k, len(v.encode("utf-8"))) for k, v in self._memory.items())
        out = []
        for path in self.root.iterdir():
            if path.name.startswith(".tmp-") or not path.is_file():
                continue
            out.append((path.name, path.stat().st_size))
        return sorted(out)

    def __len__(self) -> int:
        return len(self.entries())
