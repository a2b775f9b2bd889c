"""
Masking
Chunk, full-context and padding attention masks that switch the shared
encoder between streaming and non-streaming modes.
"""

from typing import Optional, Sequence

import numpy as np

from ..common import CHUNK_DYNAMIC, CHUNK_FIXED, CHUNK_FULL, ChunkPolicy, ValidationError


def chunk_mask(length: int, chunk: int) -> np.ndarray:
    """(i, j) is true iff key j's chunk is not after query i's chunk"""
    if length < 1 or chunk < 1:
        raise ValidationError("chunk_mask needs length ≥ 1 and chunk ≥ 1")
    index = np.arange(length)
    return (index[None, :] // chunk) <= (index[:, None] // chunk)


def full_mask(length: int) -> np.ndarray:
    if length < 1:
        raise ValidationError("full_mask needs length ≥ 1")
    return np.ones((length, length), dtype=bool)


def causal_mask(length: int) -> np.ndarray:
    """Lower-triangular inclusive mask for decoder self-attention"""
    return chunk_mask(length, 1)


def context_mask(length: int, chunk: Optional[int]) -> np.ndarray:
    """Full mask when chunk is None, chunk mask otherwise"""
    return full_mask(length) if chunk is None else chunk_mask(length, chunk)


def padding_mask(lengths: Sequence[int], max_length: int) -> np.ndarray:
    """[B, max_length] booleans, true on real frames"""
    lengths = np.asarray(lengths, dtype=np.int64)
    if np.any(lengths > max_length):
        raise ValidationError(f"length {int(lengths.max())} exceeds padded length {max_length}")
    return np.arange(max_length)[None, :] < lengths[:, None]


def attention_mask(lengths: Sequence[int], max_length: int, chunk: Optional[int]) -> np.ndarray:
    """[B, T′, T′] chunk (or full) mask ANDed with key padding"""
    keys = padding_mask(lengths, max_length)
    return context_mask(max_length, chunk)[None, :, :] & keys[:, None, :]


def sample_chunk(policy: ChunkPolicy, rng: np.random.Generator) -> Optional[int]:
    """One chunk draw per batch; None means full context"""
    policy.validate()
    if policy.mode == CHUNK_FULL:
        return None
    if policy.mode == CHUNK_FIXED:
        return policy.chunk_size
    if policy.mode == CHUNK_DYNAMIC:
        if rng.random() < policy.p_full:
            return None
        return int(rng.integers(1, policy.max_chunk + 1))
    raise ValidationError(f"unknown chunk policy mode: {policy.mode}")
