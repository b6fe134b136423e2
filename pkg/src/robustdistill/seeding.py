"""Deterministic seed derivation.

All randomness in an experiment flows from a single root seed through named
substreams ("data", "init", "attack", "schedule", ...). Substream seeds are
derived by hashing the root seed together with the stream name, so adding a
new consumer never shifts the draws of an existing one.
"""

import hashlib

import numpy as np
import torch

_SEED_SPACE = 2**63  # torch.Generator.manual_seed accepts signed 64-bit


def substream_seed(root_seed: int, *names) -> int:
    """Derive a stable seed for the substream identified by ``names``."""
    tag = "/".join(str(n) for n in names)
    digest = hashlib.sha256(f"{int(root_seed)}|{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % _SEED_SPACE


def torch_generator(root_seed: int, *names) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(substream_seed(root_seed, *names))
    return gen


def numpy_generator(root_seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root_seed, *names))
