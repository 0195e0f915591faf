"""Deterministic identifier and token-string generation.

Every service draws its identifiers (stream ids, ticket strings, jti values)
from an IdFactory. Seeding the factory makes a whole federation run
reproducible; the default is seeded from the OS RNG.
"""

from __future__ import annotations

import random
import threading
from collections import Counter


class IdFactory:
    def __init__(self, seed: int | None = None):
        self._rng = random.Random(seed)
        self._counters: Counter[str] = Counter()
        self._lock = threading.Lock()

    def new_id(self, kind: str) -> str:
        """Unique readable id, e.g. "stream-0001-7f3a9c"."""
        with self._lock:
            self._counters[kind] += 1
            n = self._counters[kind]
            suffix = self._rng.getrandbits(24)
        return f"{kind}-{n:04d}-{suffix:06x}"

    def new_secret(self, kind: str) -> str:
        """Opaque token string; uniqueness guaranteed by an embedded counter."""
        with self._lock:
            self._counters[kind] += 1
            n = self._counters[kind]
            body = self._rng.getrandbits(128)
        return f"{kind}.{n:06d}.{body:032x}"

    def key_seed(self) -> bytes:
        """32 bytes of key material (deterministic under a fixed seed)."""
        with self._lock:
            return self._rng.getrandbits(256).to_bytes(32, "big")
