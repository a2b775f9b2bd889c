"""
Analysis
Character error rate, streaming vs. full-context representation gap,
uniformity of the representation and 2-D projection dumps.
"""

import csv
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..common import (
    CheckpointError, GapReport, GapRow, ModelConfig, NumericError, Utterance, ValidationError, format_chunk,
)
from .model import Parameters, check_params, encode

POWER_ITERATIONS = 1000
POWER_TOLERANCE = 1e-12


def edit_distance(ref: Sequence[int], hyp: Sequence[int]) -> int:
    """Levenshtein distance with unit costs"""
    previous = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        current = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            current[j] = min(previous[j] + 1,
                             current[j - 1] + 1,
                             previous[j - 1] + (r != h))
        previous = current
    return previous[-1]


def cer(refs: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]]) -> float:
    """Σ edit distance / Σ reference length"""
    if len(refs) != len(hyps):
        raise ValidationError(f"{len(refs)} references but {len(hyps)} hypotheses")
    total = sum(len(r) for r in refs)
    if total == 0:
        raise ValidationError("empty reference corpus")
    return sum(edit_distance(r, h) for r, h in zip(refs, hyps)) / total


def _unit_rows(frames: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(frames, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError("degenerate representation: zero-norm frame vector")
    return frames / norms


def paired_cosines(h_s: np.ndarray, h_ns: np.ndarray) -> np.ndarray:
    """Cosine similarity of each streaming frame with its full-context twin"""
    if h_s.shape != h_ns.shape:
        raise ValidationError("paired frames must share one shape")
    return np.clip(np.sum(_unit_rows(h_s) * _unit_rows(h_ns), axis=-1), -1.0, 1.0)


def uniformity(frames: np.ndarray) -> float:
    """log of the mean over frame pairs of exp(−2‖x̂ − ŷ‖²) on unit-normalized frames"""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise ValidationError("uniformity needs at least two frames")
    unit = _unit_rows(frames)
    sq_dist = np.maximum(2.0 - 2.0 * unit @ unit.T, 0.0)
    upper = np.triu_indices(frames.shape[0], k=1)
    return float(np.log(np.mean(np.exp(-2.0 * sq_dist[upper]))))


@dataclass
class Projection:
    """Top-two principal directions of a frame cloud"""
    components: np.ndarray      # [2, d]
    coords: np.ndarray          # [n, 2]
    variances: np.ndarray       # [2]
    mean: np.ndarray            # [d]


def _power_iteration(matrix: np.ndarray, start: np.ndarray, against: Optional[np.ndarray]) -> np.ndarray:
    vector = start / np.linalg.norm(start)
    for _ in range(POWER_ITERATIONS):
        following = matrix @ vector
        if against is not None:
            following = following - (following @ against) * against
        norm = np.linalg.norm(following)
        if norm < POWER_TOLERANCE:
            return np.zeros_like(vector)
        following = following / norm
        if np.linalg.norm(following - vector) < POWER_TOLERANCE:
            return following
        vector = following
    return vector


def _orthogonal_fallback(first: np.ndarray) -> np.ndarray:
    for axis in np.argsort(np.abs(first)):
        basis = np.zeros_like(first)
        basis[axis] = 1.0
        candidate = basis - (basis @ first) * first
        if np.linalg.norm(candidate) > 1e-6:
            return candidate / np.linalg.norm(candidate)
    raise NumericError("cannot build a second principal direction")


def _fix_sign(vector: np.ndarray) -> np.ndarray:
    return -vector if vector[np.argmax(np.abs(vector))] < 0 else vector


def pca_2d(frames: np.ndarray, seed: int = 0) -> Projection:
    """Power iteration for the first component, deflation for the second"""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2 or frames.shape[1] < 2:
        raise ValidationError("PCA needs at least two frames of dimension ≥ 2")
    mean = frames.mean(axis=0)
    centered = frames - mean
    covariance = centered.T @ centered / frames.shape[0]
    start = np.random.default_rng(seed).normal(size=frames.shape[1])

    first = _power_iteration(covariance, start, None)
    if not np.any(first):
        first = np.zeros(frames.shape[1])
        first[0] = 1.0
    first = _fix_sign(first)
    deflated = covariance - (first @ covariance @ first) * np.outer(first, first)
    second = _power_iteration(deflated, start - (start @ first) * first, first)
    if not np.any(second):
        second = _orthogonal_fallback(first)
    second = second - (second @ first) * first
    second = _fix_sign(second / np.linalg.norm(second))

    components = np.stack([first, second])
    variances = np.maximum(np.array([c @ covariance @ c for c in components]), 0.0)
    if variances[1] > variances[0]:
        components, variances = components[::-1].copy(), variances[::-1].copy()
    return Projection(components=components, coords=centered @ components.T, variances=variances, mean=mean)


def select_sample(corpus: Sequence[Utterance], size: int, seed: int) -> List[Utterance]:
    """Seeded subset of the corpus, kept in corpus order"""
    if size >= len(corpus):
        return list(corpus)
    chosen = np.random.default_rng(seed).choice(len(corpus), size=size, replace=False)
    return [corpus[i] for i in sorted(chosen)]


def gap_report(params: Parameters, config: ModelConfig, sample: Sequence[Utterance],
               chunks: Sequence[int], projection_path: Optional[str] = None) -> GapReport:
    """Paired-cosine and uniformity statistics per streaming chunk size"""
    try:
        check_params(params, config)
    except ValidationError as e:
        raise CheckpointError(f"checkpoint does not match the model config: {e}")
    if not sample:
        raise ValidationError("gap analysis needs at least one utterance")
    if any(c < 1 for c in chunks):
        raise ValidationError("chunk must be ≥ 1 or 'full'")
    full: Dict[str, np.ndarray] = {}
    streaming: Dict[int, Dict[str, np.ndarray]] = {c: {} for c in chunks}
    for utterance in sample:
        full[utterance.id] = encode(utterance.frames, None, params, config).sequence(0).values.astype(np.float64)
        for chunk in chunks:
            output = encode(utterance.frames, chunk, params, config)
            streaming[chunk][utterance.id] = output.sequence(0).values.astype(np.float64)

    pooled_ns = np.concatenate([full[u.id] for u in sample])
    uniformity_ns = uniformity(pooled_ns) if pooled_ns.shape[0] >= 2 else 0.0
    rows = []
    for chunk in chunks:
        pooled_s = np.concatenate([streaming[chunk][u.id] for u in sample])
        cosines = paired_cosines(pooled_s, pooled_ns)
        rows.append(GapRow(
            chunk=int(chunk),
            mean_cos=float(np.clip(cosines.mean(), -1.0, 1.0)),
            sd_cos=float(cosines.std()),
            uniformity_s=uniformity(pooled_s) if pooled_s.shape[0] >= 2 else 0.0,
            uniformity_ns=uniformity_ns,
        ))

    if projection_path:
        _write_projection(projection_path, sample, full, streaming)
    return GapReport(rows=rows, projection_path=projection_path)


def _write_projection(path: str, sample: Sequence[Utterance], full: Dict[str, np.ndarray],
                      streaming: Dict[int, Dict[str, np.ndarray]]):
    """Per-frame CSV: identity columns, first two principal coordinates, raw vector"""
    records = []
    for utterance in sample:
        for frame, vector in enumerate(full[utterance.id]):
            records.append((utterance.id, frame, "ns", format_chunk(None), vector))
        for chunk, frames in streaming.items():
            for frame, vector in enumerate(frames[utterance.id]):
                records.append((utterance.id, frame, "s", format_chunk(chunk), vector))
    projection = pca_2d(np.stack([r[4] for r in records]))

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    dim = records[0][4].shape[0]
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['utt_id', 'frame', 'mode', 'chunk', 'pc1', 'pc2'] + [f'v{i}' for i in range(dim)])
        for (utt_id, frame, mode, chunk, vector), (pc1, pc2) in zip(records, projection.coords):
            writer.writerow([utt_id, frame, mode, chunk, f"{pc1:.8f}", f"{pc2:.8f}"]
                            + [f"{v:.8f}" for v in vector])


def write_gap_report(report: GapReport, path: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['chunk', 'mean_cos', 'sd_cos', 'uniformity_s', 'uniformity_ns'])
        for row in report.rows:
            writer.writerow([row.chunk, f"{row.mean_cos:.8f}", f"{row.sd_cos:.8f}",
                             f"{row.uniformity_s:.8f}", f"{row.uniformity_ns:.8f}"])


@dataclass
class CERRow:
    """CER for one decoding mode, chunk and pass"""
    mode: str
    chunk: Optional[int]
    passes: int
    cer: float


def write_cer_report(rows: Sequence[CERRow], path: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['mode', 'chunk', 'pass', 'cer'])
        for row in rows:
            writer.writerow([row.mode, format_chunk(row.chunk), row.passes, f"{row.cer:.6f}"])
