"""
Seed management.

One global seed is split per stage, epoch and sample with a counter-based
SeedSequence, so every stage can be reproduced on its own.
"""

import hashlib
import random
from typing import Union

import numpy as np
import torch

SeedKey = Union[int, str]


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        if key < 0:
            raise ValueError(f"seed keys must be nonnegative, got {key}")
        return int(key)
    digest = hashlib.sha256(str(key).encode('utf-8')).digest()
    return int.from_bytes(digest[:4], 'little')


def derive_seed(global_seed: int, *keys: SeedKey) -> int:
    """
    Derive an independent 31-bit seed for a named sub-stream.

    Args:
        global_seed: Run-level seed
        keys: Stage names or counters identifying the sub-stream

    Returns:
        Integer seed usable by numpy, torch and python random
    """
    spawn_key = tuple(_key_to_int(k) for k in keys)
    sequence = np.random.SeedSequence(entropy=int(global_seed), spawn_key=spawn_key)
    return int(sequence.generate_state(1, dtype=np.uint32)[0] & 0x7FFFFFFF)


def seed_everything(seed: int) -> None:
    """Seed python, numpy and torch and ask torch for deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def torch_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator
