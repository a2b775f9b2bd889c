"""
Tests for chunk, padding and attention masks
"""

import numpy as np
import pytest

from unified_asr.common import CHUNK_FIXED, CHUNK_FULL, ChunkPolicy, ValidationError
from unified_asr.core.masking import (
    attention_mask, causal_mask, chunk_mask, context_mask, full_mask, padding_mask, sample_chunk,
)


@pytest.mark.unit
class TestChunkMask:
    """Block lower-triangular masks"""

    def test_four_frames_chunk_two(self):
        expected = np.array([
            [1, 1, 0, 0],
            [1, 1, 0, 0],
            [1, 1, 1, 1],
            [1, 1, 1, 1],
        ], dtype=bool)
        np.testing.assert_array_equal(chunk_mask(4, 2), expected)

    def test_chunk_one_is_causal(self):
        np.testing.assert_array_equal(chunk_mask(5, 1), np.tril(np.ones((5, 5), dtype=bool)))
        np.testing.assert_array_equal(causal_mask(5), chunk_mask(5, 1))

    def test_chunk_longer_than_sequence_is_full(self):
        np.testing.assert_array_equal(chunk_mask(3, 16), full_mask(3))

    @pytest.mark.parametrize("length", [1, 5, 9, 24])
    @pytest.mark.parametrize("chunk", [1, 2, 3, 8, 25])
    def test_structural_properties(self, length, chunk):
        mask = chunk_mask(length, chunk)
        assert mask.shape == (length, length)
        assert mask.diagonal().all()
        for i in range(length):
            for j in range(length):
                assert mask[i, j] == (j // chunk <= i // chunk)
        # Later queries never see less than earlier ones
        for i in range(1, length):
            assert np.all(mask[i] >= mask[i - 1])

    def test_context_mask_switches_on_chunk(self):
        np.testing.assert_array_equal(context_mask(6, None), full_mask(6))
        np.testing.assert_array_equal(context_mask(6, 2), chunk_mask(6, 2))

    def test_invalid_arguments(self):
        with pytest.raises(ValidationError):
            chunk_mask(4, 0)
        with pytest.raises(ValidationError):
            chunk_mask(0, 2)
        with pytest.raises(ValidationError):
            full_mask(0)


@pytest.mark.unit
class TestPaddingMask:
    """Key padding and combined attention masks"""

    def test_padding_rows(self):
        expected = np.array([
            [1, 1, 1, 0],
            [1, 1, 1, 1],
            [1, 0, 0, 0],
        ], dtype=bool)
        np.testing.assert_array_equal(padding_mask([3, 4, 1], 4), expected)

    def test_length_beyond_padding_rejected(self):
        with pytest.raises(ValidationError):
            padding_mask([5], 4)

    def test_attention_mask_combines_chunk_and_keys(self):
        mask = attention_mask([3, 4], 4, 2)
        assert mask.shape == (2, 4, 4)
        np.testing.assert_array_equal(mask[1], chunk_mask(4, 2))
        # Padded key 3 is hidden from every query of the first sequence
        assert not mask[0, :, 3].any()
        np.testing.assert_array_equal(mask[0, :, :3], chunk_mask(4, 2)[:, :3])

    def test_full_attention_mask_is_key_padding(self):
        mask = attention_mask([2, 3], 3, None)
        np.testing.assert_array_equal(mask[0], np.array([[1, 1, 0]] * 3, dtype=bool))
        assert mask[1].all()


@pytest.mark.unit
class TestSampleChunk:
    """Per-batch chunk draws"""

    def test_full_mode(self, rng):
        assert sample_chunk(ChunkPolicy(mode=CHUNK_FULL), rng) is None

    def test_fixed_mode(self, rng):
        policy = ChunkPolicy(mode=CHUNK_FIXED, chunk_size=8)
        assert all(sample_chunk(policy, rng) == 8 for _ in range(20))

    def test_always_full(self, rng):
        policy = ChunkPolicy(p_full=1.0)
        assert all(sample_chunk(policy, rng) is None for _ in range(50))

    def test_never_full_stays_in_range(self, rng):
        policy = ChunkPolicy(p_full=0.0, max_chunk=25)
        draws = [sample_chunk(policy, rng) for _ in range(2000)]
        assert all(d is not None and 1 <= d <= 25 for d in draws)
        assert set(draws) == set(range(1, 26))

    @pytest.mark.parametrize("p_full,seed", [(0.0, 31), (0.5, 32)])
    def test_chunk_sizes_are_uniform(self, p_full, seed):
        rng = np.random.default_rng(seed)
        policy = ChunkPolicy(p_full=p_full, max_chunk=25)
        draws = [sample_chunk(policy, rng) for _ in range(50000)]
        sizes = np.array([d for d in draws if d is not None])
        observed = np.bincount(sizes, minlength=26)[1:]
        assert observed.sum() == sizes.size and observed.size == 25
        expected = sizes.size / 25
        statistic = float(np.sum((observed - expected) ** 2 / expected))
        # 0.999 quantile of chi-squared with 24 degrees of freedom
        assert statistic < 51.18

    def test_full_context_frequency(self):
        rng = np.random.default_rng(2024)
        policy = ChunkPolicy(p_full=0.5)
        draws = [sample_chunk(policy, rng) for _ in range(10000)]
        share = sum(d is None for d in draws) / len(draws)
        assert 0.47 <= share <= 0.53

    def test_same_seed_same_sequence(self):
        policy = ChunkPolicy()
        first = [sample_chunk(policy, np.random.default_rng(5)) for _ in range(3)]
        second = [sample_chunk(policy, np.random.default_rng(5)) for _ in range(3)]
        assert first == second

    def test_invalid_policy(self, rng):
        with pytest.raises(ValidationError):
            sample_chunk(ChunkPolicy(mode="sliding"), rng)
        with pytest.raises(ValidationError):
            sample_chunk(ChunkPolicy(p_full=1.5), rng)
