"""Small shared helpers: thread caps, stable seeds, file hashes."""
from __future__ import annotations

import hashlib
import os

THREADS_ENV = "STROKELAB_THREADS"


def n_threads(requested: int | None = None) -> int:
    """Worker count: ``requested`` (default: all cores) capped by STROKELAB_THREADS."""
    n = requested if requested and requested > 0 else (os.cpu_count() or 1)
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return n


def stable_seed(*parts) -> int:
    """64-bit seed from arbitrary printable parts; identical across runs and platforms."""
    h = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
