"""Seed derivation. Every random stage takes its seed from one master seed.

``derive_seed(master, "dummy", "2023-05-01")`` hashes the colon-joined labels
with SHA-256 and keeps the first four bytes, so seeds are stable across
processes, platforms and Python versions (unlike ``hash()``).
"""

import hashlib

import numpy as np


def derive_seed(master, *labels):
    key = ":".join([str(int(master))] + [str(label) for label in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def make_rng(seed):
    """PCG64 generator; the bit stream is fixed for a given integer seed."""
    return np.random.Generator(np.random.PCG64(int(seed)))
