"""
Losses
CTC, label-smoothed attention loss, the frame-level contrastive bridge,
the L2 bridge and their joint combination.
"""

from typing import List, Optional, Sequence, Union

import numpy as np

from ..common import (
    BRIDGE_CONTRASTIVE, BRIDGE_L2, BRIDGE_NONE, ContrastiveConfig, LossBreakdown, NumericError,
    ValidationError, ctc_min_frames,
)
from .tensor import Tensor, _accumulate, as_tensor, concat, log_softmax, sqrt, tsum

Scalar = Union[Tensor, float]


def _extend_with_blanks(target: Sequence[int], blank: int) -> np.ndarray:
    extended = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    extended[1::2] = target
    return extended


def _ctc_tables(logprobs: np.ndarray, extended: np.ndarray, blank: int):
    """Log-space forward (alpha) and backward (beta) variables, both including the frame's emission"""
    frames, states = logprobs.shape[0], extended.shape[0]
    emissions = logprobs[:, extended]
    can_skip = np.zeros(states, dtype=bool)
    if states > 2:
        can_skip[2:] = (extended[2:] != blank) & (extended[2:] != extended[:-2])

    alpha = np.full((frames, states), -np.inf)
    beta = np.full((frames, states), -np.inf)
    with np.errstate(invalid='ignore'):
        alpha[0, :min(2, states)] = emissions[0, :min(2, states)]
        for t in range(1, frames):
            previous = alpha[t - 1]
            merged = previous.copy()
            merged[1:] = np.logaddexp(merged[1:], previous[:-1])
            merged[2:] = np.logaddexp(merged[2:], np.where(can_skip[2:], previous[:-2], -np.inf))
            alpha[t] = merged + emissions[t]

        beta[-1, max(0, states - 2):] = emissions[-1, max(0, states - 2):]
        for t in range(frames - 2, -1, -1):
            following = beta[t + 1]
            merged = following.copy()
            merged[:-1] = np.logaddexp(merged[:-1], following[1:])
            merged[:-2] = np.logaddexp(merged[:-2], np.where(can_skip[2:], following[2:], -np.inf))
            beta[t] = merged + emissions[t]
    return alpha, beta, emissions


def ctc_loss(logprobs: Tensor, target: Sequence[int], blank: Optional[int] = None) -> Tensor:
    """−log P(target | logprobs) summed over all CTC alignments; logprobs is [T′, V+1]"""
    logprobs = as_tensor(logprobs)
    if logprobs.ndim != 2:
        raise ValidationError("ctc_loss expects a T′×(V+1) matrix")
    frames, classes = logprobs.shape
    blank = classes - 1 if blank is None else blank
    target = [int(t) for t in target]
    if any(not 0 <= t < classes or t == blank for t in target):
        raise ValidationError("CTC target holds blank or out-of-range tokens")
    if frames < ctc_min_frames(target):
        raise ValidationError(f"CTC infeasible: {frames} frames for {len(target)} tokens")

    values = logprobs.values.astype(np.float64)
    extended = _extend_with_blanks(target, blank)
    alpha, beta, emissions = _ctc_tables(values, extended, blank)
    tail = alpha[-1, -2:] if extended.shape[0] > 1 else alpha[-1, -1:]
    log_likelihood = np.logaddexp.reduce(tail)
    if not np.isfinite(log_likelihood):
        raise NumericError("CTC likelihood underflowed")

    def backward(grad):
        with np.errstate(invalid='ignore'):
            posterior = np.exp(alpha + beta - emissions - log_likelihood)
        occupancy = np.zeros_like(values)
        np.add.at(occupancy, (np.arange(frames)[:, None], extended[None, :]), posterior)
        _accumulate(logprobs, -occupancy * grad)

    return Tensor._from_op(np.array(-log_likelihood, dtype=logprobs.dtype), (logprobs,), backward, "ctc_loss")


def smoothed_targets(targets: Sequence[int], classes: int, smoothing: float) -> np.ndarray:
    """1−ε on the gold class and ε/(classes−1) elsewhere"""
    dist = np.full((len(targets), classes), smoothing / (classes - 1))
    dist[np.arange(len(targets)), np.asarray(targets, dtype=np.int64)] = 1.0 - smoothing
    return dist


def _kl_rows(logits: Tensor, dist: np.ndarray) -> Tensor:
    """Row-wise KL(dist ‖ softmax(logits))"""
    with np.errstate(divide='ignore', invalid='ignore'):
        entropy = np.where(dist > 0, dist * np.log(dist), 0.0).sum(axis=-1)
    cross = tsum(log_softmax(logits) * dist.astype(logits.dtype), axis=-1)
    return entropy.astype(logits.dtype) - cross


def aed_loss(logits: Tensor, target_with_eos: Sequence[int], smoothing: float) -> Tensor:
    """Mean per-position KL between the smoothed target and the decoder distribution"""
    logits = as_tensor(logits)
    if logits.ndim != 2 or logits.shape[0] != len(target_with_eos):
        raise ValidationError(
            f"target length {len(target_with_eos)} does not match {logits.shape[0]} decoder positions")
    classes = logits.shape[1]
    if any(not 0 <= t < classes for t in target_with_eos):
        raise ValidationError("AED target token out of range")
    return _kl_rows(logits, smoothed_targets(target_with_eos, classes, smoothing)).mean()


def _unit_rows(x: Tensor) -> Tensor:
    norms = np.linalg.norm(x.values, axis=-1)
    if np.any(norms == 0):
        raise NumericError("degenerate representation: zero-norm frame vector")
    return x / sqrt(tsum(x * x, axis=-1, keepdims=True))


def _contrastive_rows(anchors: Tensor, candidates: Tensor, temperature: float) -> Tensor:
    """Per-row −log softmax(cos/τ)[0]; anchors [n, d], candidates [n, 1+N, d] with the positive first"""
    sims = tsum(_unit_rows(anchors).reshape(anchors.shape[0], 1, anchors.shape[1]) * _unit_rows(candidates),
                axis=-1) * (1.0 / temperature)
    return -log_softmax(sims)[:, 0]


def contrastive_frame_loss(h_s: Tensor, h_ns: Tensor, distractors: Tensor, temperature: float) -> Tensor:
    """Contrastive loss of one streaming frame against its full-context twin and N distractors"""
    if temperature <= 0:
        raise ValidationError("temperature must be > 0")
    h_s, h_ns, distractors = as_tensor(h_s), as_tensor(h_ns), as_tensor(distractors)
    dim = h_s.shape[-1]
    candidates = concat([h_ns.reshape(1, dim), distractors.reshape(-1, dim)], axis=0)
    return _contrastive_rows(h_s.reshape(1, dim), candidates.reshape(1, -1, dim), temperature)[0]


def sample_distractors(num_frames: int, num_distractors: int, rng: np.random.Generator) -> np.ndarray:
    """[n, min(N, n−1)] frame indices, each row sampled without replacement and excluding its own frame"""
    if num_frames < 2:
        raise ValidationError("no negatives available: utterance has a single frame")
    count = min(num_distractors, num_frames - 1)
    keys = rng.random((num_frames, num_frames))
    np.fill_diagonal(keys, np.inf)
    return np.argsort(keys, axis=1, kind='stable')[:, :count]


def contrastive_loss(h_s: Tensor, h_ns: Tensor, cfg: ContrastiveConfig,
                     rng: Optional[np.random.Generator] = None,
                     distractors: Optional[np.ndarray] = None) -> Tensor:
    """Mean frame-level contrastive loss over an utterance's [n, d] frames"""
    h_s, h_ns = as_tensor(h_s), as_tensor(h_ns)
    if h_s.shape != h_ns.shape or h_s.ndim != 2:
        raise ValidationError("streaming and full-context frames must share one n×d shape")
    if cfg.temperature <= 0:
        raise ValidationError("temperature must be > 0")
    frames, dim = h_s.shape
    if distractors is None:
        if rng is None:
            raise ValidationError("distractor sampling needs an RNG")
        distractors = sample_distractors(frames, cfg.num_distractors, rng)
    distractors = np.asarray(distractors, dtype=np.int64)
    if frames < 2 or distractors.ndim != 2 or distractors.shape[0] != frames or distractors.shape[1] < 1:
        raise ValidationError("no negatives available")
    if np.any(distractors == np.arange(frames)[:, None]):
        raise ValidationError("a frame cannot be its own distractor")

    targets = h_ns.detach() if cfg.stop_gradient else h_ns
    candidates = concat([targets.reshape(frames, 1, dim), targets[distractors]], axis=1)
    return _contrastive_rows(h_s, candidates, cfg.temperature).mean()


def l2_bridge_loss(h_s: Tensor, h_ns: Tensor, stop_gradient: bool = True) -> Tensor:
    """Mean over frames of ‖h_s − h_ns‖²"""
    h_s, h_ns = as_tensor(h_s), as_tensor(h_ns)
    if h_s.shape != h_ns.shape:
        raise ValidationError("streaming and full-context frames must share one shape")
    diff = h_s - (h_ns.detach() if stop_gradient else h_ns)
    return tsum(diff * diff, axis=-1).mean()


def bridge_loss(h_s: Tensor, h_ns: Tensor, cfg: ContrastiveConfig,
                rng: Optional[np.random.Generator] = None) -> Optional[Tensor]:
    """Bridge term selected by cfg.bridge; None for no bridge"""
    if cfg.bridge == BRIDGE_NONE:
        return None
    if cfg.bridge == BRIDGE_L2:
        return l2_bridge_loss(h_s, h_ns, cfg.l2_stop_gradient)
    if cfg.bridge == BRIDGE_CONTRASTIVE:
        return contrastive_loss(h_s, h_ns, cfg, rng)
    raise ValidationError(f"unknown bridge: {cfg.bridge}")


def _value(term: Optional[Scalar]) -> float:
    if term is None:
        return 0.0
    return term.item() if isinstance(term, Tensor) else float(term)


def joint_loss(ctc_s: Scalar, aed_s: Scalar, ctc_ns: Scalar, aed_ns: Scalar,
               bridge_term: Optional[Scalar], ctc_weight: float,
               bridge_kind: str = BRIDGE_NONE, ctl_weight: float = 1.0) -> LossBreakdown:
    """Two hybrid CTC/attention losses plus the weighted bridge term"""
    if not 0.0 <= ctc_weight <= 1.0:
        raise ValidationError("ctc_weight (λ) must lie in [0, 1]")
    if bridge_kind == BRIDGE_NONE:
        bridge_term = None

    asr_s = ctc_weight * as_tensor(ctc_s) + (1.0 - ctc_weight) * as_tensor(aed_s)
    asr_ns = ctc_weight * as_tensor(ctc_ns) + (1.0 - ctc_weight) * as_tensor(aed_ns)
    objective = asr_s + asr_ns
    if bridge_term is not None:
        objective = objective + ctl_weight * as_tensor(bridge_term)

    return LossBreakdown(
        ctc_s=_value(ctc_s),
        aed_s=_value(aed_s),
        ctc_ns=_value(ctc_ns),
        aed_ns=_value(aed_ns),
        bridge=_value(bridge_term),
        total=objective.item(),
        bridge_kind=bridge_kind,
        objective=objective,
    )


# Batched wrappers: per-utterance losses averaged over the batch, padding excluded
def batch_ctc_loss(logprobs: Tensor, lengths: Sequence[int], targets: Sequence[Sequence[int]]) -> Tensor:
    """logprobs is [B, T′_max, V+1]"""
    losses = [ctc_loss(logprobs[b, :int(lengths[b])], targets[b]) for b in range(len(targets))]
    return _batch_mean(losses)


def batch_aed_loss(logits: Tensor, targets: Sequence[Sequence[int]], smoothing: float) -> Tensor:
    """logits is [B, L_max, V+2]; each utterance averages over its own positions"""
    logits = as_tensor(logits)
    batch, length, classes = logits.shape
    if batch != len(targets):
        raise ValidationError("target count does not match the logits batch")
    dist = np.zeros((batch, length, classes))
    weights = np.zeros((batch, length))
    for b, target in enumerate(targets):
        if len(target) > length:
            raise ValidationError(f"target length {len(target)} exceeds {length} decoder positions")
        dist[b, :len(target)] = smoothed_targets(target, classes, smoothing)
        weights[b, :len(target)] = 1.0 / (len(target) * batch)
    per_position = _kl_rows(logits, dist)
    return tsum(per_position * weights.astype(logits.dtype))


def batch_bridge_loss(h_s: Tensor, h_ns: Tensor, lengths: Sequence[int], cfg: ContrastiveConfig,
                      rng: Optional[np.random.Generator] = None) -> Optional[Tensor]:
    """h_s and h_ns are [B, T′_max, d]"""
    if cfg.bridge == BRIDGE_NONE:
        return None
    losses = [bridge_loss(h_s[b, :int(n)], h_ns[b, :int(n)], cfg, rng) for b, n in enumerate(lengths)]
    return _batch_mean(losses)


def _batch_mean(losses: List[Tensor]) -> Tensor:
    if not losses:
        raise ValidationError("empty batch")
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    return total * (1.0 / len(losses))
