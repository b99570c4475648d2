"""Stable seed derivation so parallel order never changes outputs."""

import hashlib


def derive_seed(root_seed: int, *labels) -> int:
    """Derive a 63-bit seed from a root seed and any hashable labels.

    Stable across processes and platforms (unlike builtin ``hash``), so
    per-record work can run in any order or worker count.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root_seed)).encode("utf-8"))
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "big") & 0x7FFF_FFFF_FFFF_FFFF
