"""
Decoding
Two-pass inference: CTC prefix beam search with optional n-gram shallow
fusion, then attention rescoring with the decoder. Also greedy CTC
decoding and the N-best JSONL format.
"""

import json
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..common import DecodeConfig, Hypothesis, ModelConfig, Utterance, ValidationError
from .model import EncoderOutput, Parameters, ctc_head, decoder_forward, decoder_inputs, encode
from .ngram import EOS, NGramLM, lm_logprob
from .tensor import Tensor, get_dtype, log_softmax, precision

NEG_INF = -np.inf
# Row log-normalizers within this distance of 0 count as valid distributions
NORMALIZATION_TOLERANCE = 1e-3


@dataclass
class DecodeResult:
    """Ranked hypotheses for one utterance"""
    id: str
    hypotheses: List[Hypothesis]

    @property
    def best(self) -> Hypothesis:
        return self.hypotheses[0]

    def to_dict(self) -> Dict:
        return {'id': self.id, 'hypotheses': [h.to_dict() for h in self.hypotheses]}


def _as_matrix(logprobs: Union[Tensor, np.ndarray]) -> np.ndarray:
    values = logprobs.values if isinstance(logprobs, Tensor) else np.asarray(logprobs)
    return np.asarray(values, dtype=np.float64)


def check_distributions(logprobs: np.ndarray):
    """Raise unless every row is a log-distribution"""
    if logprobs.ndim != 2 or logprobs.shape[0] < 1 or logprobs.shape[1] < 2:
        raise ValidationError("malformed CTC distributions: expected a T′×(V+1) matrix")
    if np.any(np.isnan(logprobs)) or np.any(logprobs == np.inf):
        raise ValidationError("malformed CTC distributions: NaN or +inf entries")
    with np.errstate(divide='ignore'):
        norms = np.logaddexp.reduce(logprobs, axis=1)
    if np.any(np.abs(norms) > NORMALIZATION_TOLERANCE):
        raise ValidationError("malformed CTC distributions: rows do not sum to 1")


def _rank_key(score: float, tokens: Tuple[int, ...]):
    return (-score, tokens)


def prefix_beam_search(logprobs: Union[Tensor, np.ndarray], beam: int, lm: Optional[NGramLM] = None,
                       lm_weight: float = 0.0, blank: Optional[int] = None) -> List[Hypothesis]:
    """CTC prefix beam search over [T′, V+1] log-probabilities; ties break lexicographically"""
    if beam < 1:
        raise ValidationError("beam must be ≥ 1")
    logprobs = _as_matrix(logprobs)
    check_distributions(logprobs)
    classes = logprobs.shape[1]
    blank = classes - 1 if blank is None else blank
    tokens = [k for k in range(classes) if k != blank]
    if lm is not None and lm.vocab_size != len(tokens):
        raise ValidationError(f"LM vocabulary {lm.vocab_size} does not match model vocabulary {len(tokens)}")
    fused = lm is not None and lm_weight != 0.0

    lm_cache: Dict[Tuple[int, ...], float] = {(): 0.0}

    def lm_score(prefix: Tuple[int, ...]) -> float:
        if prefix not in lm_cache:
            lm_cache[prefix] = lm_score(prefix[:-1]) + lm_logprob(lm, prefix[:-1], prefix[-1])
        return lm_cache[prefix]

    def score(prefix: Tuple[int, ...], pair) -> float:
        value = np.logaddexp(pair[0], pair[1])
        return value + lm_weight * lm_score(prefix) if fused else value

    # prefix -> (log P ending in blank, log P ending in a token)
    beams: Dict[Tuple[int, ...], Tuple[float, float]] = {(): (0.0, NEG_INF)}
    for row in logprobs:
        extended: Dict[Tuple[int, ...], List[float]] = defaultdict(lambda: [NEG_INF, NEG_INF])
        for prefix, (p_blank, p_token) in beams.items():
            total = np.logaddexp(p_blank, p_token)
            entry = extended[prefix]
            entry[0] = np.logaddexp(entry[0], total + row[blank])
            last = prefix[-1] if prefix else None
            for k in tokens:
                grown = extended[prefix + (k,)]
                if k == last:
                    # A repeat only extends after a blank; otherwise it merges into the same prefix
                    grown[1] = np.logaddexp(grown[1], p_blank + row[k])
                    entry[1] = np.logaddexp(entry[1], p_token + row[k])
                else:
                    grown[1] = np.logaddexp(grown[1], total + row[k])
        ranked = sorted(extended.items(), key=lambda item: _rank_key(score(item[0], item[1]), item[0]))
        beams = {prefix: (pair[0], pair[1]) for prefix, pair in ranked[:beam]}

    hypotheses = []
    for prefix, pair in beams.items():
        ctc = float(np.logaddexp(pair[0], pair[1]))
        lm_total = 0.0
        if fused:
            lm_total = lm_score(prefix) + lm_logprob(lm, prefix, EOS)
        hypotheses.append(Hypothesis(tokens=prefix, ctc_logscore=ctc, lm_logscore=lm_total,
                                     combined=ctc + lm_weight * lm_total))
    hypotheses.sort(key=lambda h: _rank_key(h.combined, h.tokens))
    return hypotheses


def ctc_greedy_search(logprobs: Union[Tensor, np.ndarray], blank: Optional[int] = None) -> List[int]:
    """Best-path decoding: per-frame argmax, merge repeats, drop blanks"""
    logprobs = _as_matrix(logprobs)
    blank = logprobs.shape[1] - 1 if blank is None else blank
    best = np.argmax(logprobs, axis=1)
    out = []
    previous = None
    for token in best:
        if token != previous and token != blank:
            out.append(int(token))
        previous = token
    return out


def attention_rescore(hyps: Sequence[Hypothesis], memory: EncoderOutput, params: Parameters,
                      config: ModelConfig, ctc_weight: float) -> List[Hypothesis]:
    """Second pass: teacher-forced decoder scores combined with the first-pass CTC score"""
    if not hyps:
        raise ValidationError("attention rescoring needs at least one hypothesis")
    if memory.batch_size != 1:
        raise ValidationError("attention rescoring works on one utterance at a time")
    frames = memory.sequence(0).values
    count = len(hyps)
    repeated = EncoderOutput(hidden=Tensor(np.repeat(frames[None], count, axis=0), dtype=frames.dtype),
                             lengths=np.full(count, frames.shape[0], dtype=np.int64))
    prev, targets = decoder_inputs([h.tokens for h in hyps], config.vocab)
    logp = log_softmax(decoder_forward(repeated, prev, params, config)).values.astype(np.float64)

    rescored = []
    for row, (hyp, target) in enumerate(zip(hyps, targets)):
        aed = float(logp[row, np.arange(len(target)), target].sum())
        rescored.append(Hypothesis(
            tokens=tuple(hyp.tokens),
            ctc_logscore=hyp.ctc_logscore,
            lm_logscore=hyp.lm_logscore,
            aed_logscore=aed,
            combined=aed + ctc_weight * hyp.ctc_logscore,
        ))
    rescored.sort(key=lambda h: _rank_key(h.combined, h.tokens))
    return rescored


def first_pass_best(result: DecodeResult, lm_weight: float = 0.0) -> Hypothesis:
    """Top hypothesis by first-pass score, recovered from a rescored N-best list"""
    return min(result.hypotheses,
               key=lambda h: _rank_key(h.ctc_logscore + lm_weight * h.lm_logscore, h.tokens))


def inference_params(params: Parameters) -> Parameters:
    """Graph-free copies of the parameters for read-only decoding"""
    return {name: tensor.detach() for name, tensor in params.items()}


def decode_utterance(utterance: Utterance, params: Parameters, config: ModelConfig,
                     dcfg: DecodeConfig, lm: Optional[NGramLM] = None) -> DecodeResult:
    """Pass 1 and, when requested, pass 2 for one utterance"""
    output = encode(utterance.frames, dcfg.chunk, params, config)
    logprobs = ctc_head(output.sequence(0), params)
    hyps = prefix_beam_search(logprobs, dcfg.beam, lm, dcfg.lm_weight)
    if dcfg.passes == 2:
        memory = encode(utterance.frames, None, params, config) if dcfg.rescore_full_context else output
        hyps = attention_rescore(hyps, memory, params, config, dcfg.ctc_weight)
    return DecodeResult(id=utterance.id, hypotheses=hyps)


def decode_corpus(corpus: Sequence[Utterance], params: Parameters, config: ModelConfig,
                  dcfg: DecodeConfig, lm: Optional[NGramLM] = None) -> List[DecodeResult]:
    """Decode every utterance, in parallel threads when dcfg.workers > 1; output keeps corpus order"""
    dcfg.validate()
    frozen = inference_params(params)
    mode = 'float64' if get_dtype() == np.float64 else 'float32'

    def run(utterance: Utterance) -> DecodeResult:
        with precision(mode):
            return decode_utterance(utterance, frozen, config, dcfg, lm)

    if dcfg.workers == 1:
        return [run(u) for u in corpus]
    with ThreadPoolExecutor(max_workers=dcfg.workers) as pool:
        return list(pool.map(run, corpus))


def write_nbest(results: Sequence[DecodeResult], path: str):
    """One JSON object per utterance: id plus ranked hypotheses with their scores"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for result in results:
            f.write(json.dumps(result.to_dict()) + "\n")


def read_nbest(path: str) -> List[DecodeResult]:
    results = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                hyps = [Hypothesis.from_dict(h) for h in record['hypotheses']]
                results.append(DecodeResult(id=str(record['id']), hypotheses=hyps))
            except (ValueError, KeyError, TypeError) as e:
                raise ValidationError(f"{path}:{line_number}: malformed N-best line ({e})")
            if not hyps:
                raise ValidationError(f"{path}:{line_number}: utterance has no hypotheses")
    return results
