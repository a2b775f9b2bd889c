"""
Data
Synthetic template corpus, SpecAugment, JSONL corpus files and padded batching.
"""

import json
import os
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..common import (
    AugmentPolicy, CorpusFormatError, MIN_FRAMES, Utterance, ValidationError, VocabSpec,
    ctc_min_frames, subsampled_length,
)

MIN_TOKENS = 3
MAX_TOKENS = 10
MIN_DURATION = 4
MAX_DURATION = 8
MAX_DRAWS = 1000


@dataclass
class Batch:
    """Zero-padded group of utterances"""
    ids: List[str]
    frames: np.ndarray          # [B, T_max, F]
    lengths: np.ndarray         # [B]
    tokens: List[List[int]]

    @property
    def size(self) -> int:
        return len(self.ids)


def token_templates(rng: np.random.Generator, vocab_size: int, feature_dim: int) -> np.ndarray:
    """One unit-norm template vector per token"""
    templates = rng.normal(size=(vocab_size, feature_dim))
    return templates / np.linalg.norm(templates, axis=1, keepdims=True)


def render_frames(templates: np.ndarray, tokens: Sequence[int], durations: Sequence[int],
                  noise_sigma: float, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Emit each token's template for its duration, plus Gaussian noise"""
    frames = np.repeat(templates[np.asarray(tokens, dtype=np.int64)], np.asarray(durations), axis=0)
    if noise_sigma > 0:
        if rng is None:
            raise ValidationError("noisy rendering needs an RNG")
        frames = frames + rng.normal(0.0, noise_sigma, size=frames.shape)
    return frames


def _draw_transcript(rng: np.random.Generator, vocab_size: int) -> Tuple[List[int], np.ndarray]:
    count = int(rng.integers(MIN_TOKENS, MAX_TOKENS + 1))
    tokens = [int(rng.integers(vocab_size))]
    while len(tokens) < count:
        if vocab_size == 1:
            tokens.append(0)
        else:
            # No adjacent repeats
            tokens.append(int((tokens[-1] + rng.integers(1, vocab_size)) % vocab_size))
    durations = rng.integers(MIN_DURATION, MAX_DURATION + 1, size=count)
    return tokens, durations


def is_ctc_feasible(num_frames: int, tokens: Sequence[int]) -> bool:
    """True when the utterance survives subsampling and CTC can emit its tokens"""
    if num_frames < MIN_FRAMES or not tokens:
        return False
    return ctc_min_frames(tokens) <= subsampled_length(num_frames)


def gen_corpus(seed: int, n_utts: int, vocab: VocabSpec, feature_dim: int,
               noise_sigma: float) -> List[Utterance]:
    """Deterministic synthetic corpus of template emissions"""
    if n_utts < 1:
        raise ValidationError("n_utts must be ≥ 1")
    if feature_dim < 2:
        raise ValidationError("feature dimension must be ≥ 2")
    if noise_sigma < 0:
        raise ValidationError("noise_sigma must be ≥ 0")
    vocab.validate()

    rng = np.random.default_rng(seed)
    templates = token_templates(rng, vocab.size, feature_dim)

    corpus = []
    for index in range(n_utts):
        for _ in range(MAX_DRAWS):
            tokens, durations = _draw_transcript(rng, vocab.size)
            if is_ctc_feasible(int(durations.sum()), tokens):
                break
        else:
            raise ValidationError("could not draw a CTC-feasible utterance")
        frames = render_frames(templates, tokens, durations, noise_sigma, rng)
        corpus.append(Utterance(id=f"utt{index:05d}", frames=frames, tokens=tokens))
    return corpus


def split_corpus(corpus: List[Utterance], n_test: int) -> Tuple[List[Utterance], List[Utterance]]:
    """Train/test split: the last n_test utterances are held out"""
    if not 0 <= n_test < len(corpus):
        raise ValidationError("n_test must lie in [0, corpus size)")
    cut = len(corpus) - n_test
    return corpus[:cut], corpus[cut:]


def spec_augment(utterance: Utterance, policy: AugmentPolicy, rng: np.random.Generator) -> Utterance:
    """Copy with random time rows and frequency columns zeroed"""
    num_frames, feature_dim = utterance.frames.shape
    if policy.num_time_masks and policy.max_time_mask_width >= num_frames:
        raise ValidationError("time mask width must be < number of frames")
    if policy.num_freq_masks and policy.max_freq_mask_width >= feature_dim:
        raise ValidationError("frequency mask width must be < feature dimension")

    frames = utterance.frames.copy()
    for _ in range(policy.num_time_masks):
        width = int(rng.integers(0, policy.max_time_mask_width + 1))
        start = int(rng.integers(0, num_frames - width + 1))
        frames[start:start + width, :] = 0.0
    for _ in range(policy.num_freq_masks):
        width = int(rng.integers(0, policy.max_freq_mask_width + 1))
        start = int(rng.integers(0, feature_dim - width + 1))
        frames[:, start:start + width] = 0.0
    return Utterance(id=utterance.id, frames=frames, tokens=list(utterance.tokens))


def save_corpus(corpus: Sequence[Utterance], path: str):
    """Write one JSON object per utterance"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for utterance in corpus:
            record = {
                'id': utterance.id,
                'tokens': [int(t) for t in utterance.tokens],
                'frames': np.asarray(utterance.frames, dtype=np.float64).tolist(),
            }
            f.write(json.dumps(record) + "\n")


def _parse_record(line: str, line_number: int) -> Utterance:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise CorpusFormatError(f"invalid JSON ({e.msg})", line_number)
    if not isinstance(record, dict) or not {'id', 'tokens', 'frames'} <= set(record):
        raise CorpusFormatError("expected an object with id, tokens and frames", line_number)

    tokens = record['tokens']
    if not isinstance(tokens, list) or not all(isinstance(t, int) and not isinstance(t, bool) for t in tokens):
        raise CorpusFormatError("tokens must be an integer array", line_number)
    try:
        frames = np.array(record['frames'], dtype=np.float64)
    except (TypeError, ValueError):
        raise CorpusFormatError("frames must be a rectangular numeric matrix", line_number)
    if frames.ndim != 2 or frames.shape[1] < 1:
        raise CorpusFormatError("frames must be a non-empty T×F matrix", line_number)
    if not np.all(np.isfinite(frames)):
        raise CorpusFormatError("frames contain non-finite values", line_number)
    return Utterance(id=str(record['id']), frames=frames, tokens=list(tokens))


def load_corpus(path: str, vocab: Optional[VocabSpec] = None) -> List[Utterance]:
    """Read and validate a JSONL corpus"""
    corpus: List[Utterance] = []
    feature_dim = None
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            utterance = _parse_record(line, line_number)
            if feature_dim is None:
                feature_dim = utterance.feature_dim
            elif utterance.feature_dim != feature_dim:
                raise CorpusFormatError(
                    f"feature dimension {utterance.feature_dim} differs from {feature_dim}", line_number)
            if not is_ctc_feasible(utterance.num_frames, utterance.tokens):
                raise CorpusFormatError(
                    f"utterance {utterance.id} is too short or not CTC-feasible", line_number)
            if vocab is not None:
                try:
                    vocab.check_tokens(utterance.tokens)
                except ValidationError as e:
                    raise CorpusFormatError(str(e), line_number)
            corpus.append(utterance)
    return corpus


def make_batch(utterances: Sequence[Utterance]) -> Batch:
    """Zero-pad a list of utterances to a common length"""
    if not utterances:
        raise ValidationError("cannot batch an empty list")
    lengths = np.array([u.num_frames for u in utterances], dtype=np.int64)
    feature_dim = utterances[0].feature_dim
    frames = np.zeros((len(utterances), int(lengths.max()), feature_dim), dtype=np.float64)
    for row, utterance in enumerate(utterances):
        frames[row, :utterance.num_frames] = utterance.frames
    return Batch(
        ids=[u.id for u in utterances],
        frames=frames,
        lengths=lengths,
        tokens=[list(u.tokens) for u in utterances],
    )


def batches(corpus: Sequence[Utterance], batch_size: int,
            rng: Optional[np.random.Generator] = None) -> Iterator[Batch]:
    """Padded batches in corpus order, or shuffled when an RNG is given"""
    if batch_size < 1:
        raise ValidationError("batch_size must be ≥ 1")
    order = np.arange(len(corpus)) if rng is None else rng.permutation(len(corpus))
    for start in range(0, len(order), batch_size):
        yield make_batch([corpus[i] for i in order[start:start + batch_size]])
