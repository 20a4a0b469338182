"""Named random streams derived from one master seed.

Every stream is a numpy ``Generator`` over the Philox-4x64 counter-based
bit generator. The key for a stream is the first 16 bytes of
``sha256("<master_seed>/<label>/<extra>/...")`` read as a big-endian
integer, so the derivation can be reproduced outside numpy.
"""

from __future__ import annotations

import hashlib

import numpy as np

STREAMS = ("init", "shuffle", "buffer", "sampling", "probe")


def stream_seed(master_seed: int, label: str, *extra: object) -> int:
    parts = [str(int(master_seed)), label, *(str(e) for e in extra)]
    digest = hashlib.sha256("/".join(parts).encode("ascii")).digest()
    return int.from_bytes(digest[:16], "big")


def make_rng(master_seed: int, label: str, *extra: object) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(stream_seed(master_seed, label, *extra)))
