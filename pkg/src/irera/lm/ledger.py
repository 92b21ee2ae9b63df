"""Call accounting: per-(backend, role) upstream/cache counters plus
per-component invocation tallies. This is what makes cost budgets testable."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

ROLE_STUDENT = "student"
ROLE_TEACHER = "teacher"
ROLE_RETRIEVER = "retriever"

ROLES = (ROLE_STUDENT, ROLE_TEACHER, ROLE_RETRIEVER)


@dataclass(frozen=True)
class LedgerSnapshot:
    """Immutable copy of ledger state; subtract two to get a delta."""

    counters: dict[tuple[str, str], dict[str, int]]
    invocations: dict[str, int]

    def upstream(self, backend_id: str, role: str) -> int:
        return self.counters.get((backend_id, role), {}).get("upstream_calls", 0)

    def cache_hits(self, backend_id: str, role: str) -> int:
        return self.counters.get((backend_id, role), {}).get("cache_hits", 0)

    def upstream_by_role(self, role: str) -> int:
        return sum(c["upstream_calls"] for (_, r), c in self.counters.items() if r == role)

    def to_dict(self) -> dict:
        return {
            "counters": [
                {"backend": b, "role": r,
                 "upstream_calls": c["upstream_calls"], "cache_hits": c["cache_hits"]}
                for (b, r), c in sorted(self.counters.items())
            ],
            "invocations": dict(sorted(self.invocations.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LedgerSnapshot":
        counters = {
            (row["backend"], row["role"]): {
                "upstream_calls": int(row["upstream_calls"]),
                "cache_hits": int(row["cache_hits"]),
            }
            for row in data.get("counters", [])
        }
        return cls(counters=counters, invocations={k: int(v) for k, v in data.get("invocations", {}).items()})


@dataclass
class CallLedger:
    """Thread-safe monotone counters.

    upstream_calls counts only cache misses that actually reached a backend;
    cache_hits counts requests served from the cache. invocations counts
    component executions (e.g. one per module per forward pass) regardless of
    caching.
    """

    _counters: dict[tuple[str, str], dict[str, int]] = field(default_factory=dict)
    _invocations: dict[str, int] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def _bucket(self, backend_id: str, role: str) -> dict[str, int]:
        if role not in ROLES:
            raise ValueError(f"unknown ledger role {role!r}")
        return self._counters.setdefault((backend_id, role),
                                         {"upstream_calls": 0, "cache_hits": 0})

    def record_upstream(self, backend_id: str, role: str, n: int = 1) -> None:
        with self._lock:
            self._bucket(backend_id, role)["upstream_calls"] += n

    def record_cache_hit(self, backend_id: str, role: str, n: int = 1) -> None:
        with self._lock:
            self._bucket(backend_id, role)["cache_hits"] += n

    def record_invocation(self, component: str, n: int = 1) -> None:
        with self._lock:
            self._invocations[component] = self._invocations.get(component, 0) + n

    def snapshot(self) -> LedgerSnapshot:
        with self._lock:
            return LedgerSnapshot(
                counters={k: dict(v) for k, v in self._counters.items()},
                invocations=dict(self._invocations),
            )

    def delta(self, before: LedgerSnapshot) -> LedgerSnapshot:
        """Counters accumulated since `before`; zero rows are dropped."""
        now = self.snapshot()
        counters = {}
        for key, counts in now.counters.items():
            prev = before.counters.get(key, {"upstream_calls": 0, "cache_hits": 0})
            diff = {k: counts[k] - prev[k] for k in counts}
            if any(diff.values()):
                counters[key] = diff
        invocations = {}
        for comp, n in now.invocations.items():
            d = n - before.invocations.get(comp, 0)
            if d:
                invocations[comp] = d
        return LedgerSnapshot(counters=counters, invocations=invocations)
