"""Deterministic sub-seed derivation.

All randomness in a run flows from one root seed; independent consumers
(per-sensor clock offsets, per-frame noise, per-window masks, model init,
batch shuffling) get their own streams by hashing (seed, purpose tokens).
"""

import hashlib


def derive_seed(seed, *purpose):
    """Map a root seed plus purpose tokens to a stable 63-bit sub-seed.

    The mapping is a SHA-256 digest of the colon-joined tokens, so it is
    identical across processes, platforms, and Python hash randomization.
    """
    text = ":".join([str(int(seed))] + [str(p) for p in purpose])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF
