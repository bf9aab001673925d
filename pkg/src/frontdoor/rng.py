"""Deterministic random-stream splitting.

A single master seed fans out to independent named streams by XOR-ing the
seed with a stable 64-bit hash of the stream name, so adding a new RNG
consumer never perturbs the draws of existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_hash(name):
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream_seed(master_seed, *names):
    return (int(master_seed) ^ _name_hash("/".join(str(n) for n in names))) & (
        (1 << 64) - 1
    )


def stream(master_seed, *names):
    """A numpy Generator for the stream identified by the name parts."""
    return np.random.Generator(np.random.PCG64(stream_seed(master_seed, *names)))
