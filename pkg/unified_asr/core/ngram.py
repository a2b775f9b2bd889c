"""
N-gram language model
Token n-gram LM with interpolated absolute discounting, ARPA export/import
and the scoring used for shallow fusion.
"""

import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from ..common import ValidationError

BOS = "<s>"
EOS = "</s>"
DISCOUNT = 0.5
# log10 probability written for <s>, which is never predicted
BOS_LOG10 = -99.0

NGram = Tuple[str, ...]
Token = Union[int, str]


@dataclass
class NGramLM:
    """Backoff tables in natural log; probabilities are the interpolated estimates"""
    order: int
    vocab_size: int
    logprobs: Dict[NGram, float] = field(default_factory=dict)
    backoffs: Dict[NGram, float] = field(default_factory=dict)
    discount: float = DISCOUNT

    @property
    def outcomes(self) -> List[str]:
        """Everything the model can predict: the tokens plus </s>"""
        return [str(t) for t in range(self.vocab_size)] + [EOS]

    def contexts(self) -> List[NGram]:
        """Histories that carry a backoff weight"""
        return sorted(self.backoffs)

    def logprob(self, history: NGram, word: str) -> float:
        """log P(word | history), backing off with P(w|h) = bow(h) · P(w|h′)"""
        history = history[max(0, len(history) - self.order + 1):]
        penalty = 0.0
        while True:
            key = history + (word,)
            if key in self.logprobs:
                return penalty + self.logprobs[key]
            if not history:
                raise ValidationError(f"unknown LM token: {word}")
            penalty += self.backoffs.get(history, 0.0)
            history = history[1:]


def _symbol(token: Token) -> str:
    if isinstance(token, str):
        if token != EOS:
            raise ValidationError(f"unknown LM symbol: {token}")
        return token
    return str(int(token))


def history_of(lm: NGramLM, context: Sequence[int]) -> NGram:
    """<s>-prefixed history truncated to the model order"""
    symbols = (BOS,) + tuple(str(int(t)) for t in context)
    return symbols[max(0, len(symbols) - lm.order + 1):]


def lm_logprob(lm: NGramLM, context: Sequence[int], token: Token) -> float:
    """Natural-log P(token | <s> + context); token is a token ID or '</s>'"""
    if isinstance(token, int) and not 0 <= token < lm.vocab_size:
        raise ValidationError(f"token {token} outside LM vocabulary [0, {lm.vocab_size})")
    return lm.logprob(history_of(lm, context), _symbol(token))


def lm_sequence_logprob(lm: NGramLM, tokens: Sequence[int], with_eos: bool = True) -> float:
    """Log-probability of a whole transcript"""
    total = 0.0
    for position, token in enumerate(tokens):
        total += lm_logprob(lm, tokens[:position], token)
    if with_eos:
        total += lm_logprob(lm, tokens, EOS)
    return total


def _count(transcripts: Iterable[Sequence[int]], order: int) -> Dict[NGram, Dict[str, int]]:
    counts: Dict[NGram, Dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for tokens in transcripts:
        symbols = [BOS] + [str(int(t)) for t in tokens] + [EOS]
        for position in range(1, len(symbols)):
            for n in range(1, order + 1):
                start = position - n + 1
                if start < 0:
                    break
                counts[tuple(symbols[start:position])][symbols[position]] += 1
    return counts


def train_ngram(transcripts: Sequence[Sequence[int]], order: int = 3, vocab_size: Optional[int] = None,
                discount: float = DISCOUNT) -> NGramLM:
    """Interpolated absolute discounting down to a uniform floor over tokens plus </s>"""
    transcripts = [list(t) for t in transcripts]
    if not transcripts:
        raise ValidationError("cannot train an LM on an empty corpus")
    if order < 1:
        raise ValidationError("LM order must be ≥ 1")
    if not 0.0 < discount < 1.0:
        raise ValidationError("discount must lie in (0, 1)")
    seen = [t for tokens in transcripts for t in tokens]
    if vocab_size is None:
        vocab_size = max(seen) + 1 if seen else 1
    if any(not 0 <= t < vocab_size for t in seen):
        raise ValidationError(f"transcript token outside vocabulary [0, {vocab_size})")

    counts = _count(transcripts, order)
    lm = NGramLM(order=order, vocab_size=vocab_size, discount=discount)
    outcomes = lm.outcomes
    floor = 1.0 / len(outcomes)
    cache: Dict[Tuple[NGram, str], float] = {}

    def prob(history: NGram, word: str) -> float:
        key = (history, word)
        if key not in cache:
            lower = floor if not history else prob(history[1:], word)
            followers = counts.get(history)
            if not followers:
                cache[key] = lower
            else:
                total = sum(followers.values())
                weight = discount * len(followers) / total
                cache[key] = max(followers.get(word, 0) - discount, 0.0) / total + weight * lower
        return cache[key]

    for word in outcomes:
        lm.logprobs[(word,)] = math.log(prob((), word))
    lm.logprobs[(BOS,)] = BOS_LOG10 / math.log10(math.e)
    for history, followers in counts.items():
        total = sum(followers.values())
        if history:
            lm.backoffs[history] = math.log(discount * len(followers) / total)
            for word in followers:
                lm.logprobs[history + (word,)] = math.log(prob(history, word))
    return lm


def write_arpa(lm: NGramLM, path: str):
    """Standard ARPA text: log10 probabilities, tab-separated, optional backoff column"""
    by_order: Dict[int, List[NGram]] = defaultdict(list)
    for ngram in lm.logprobs:
        by_order[len(ngram)].append(ngram)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    log10e = math.log10(math.e)
    with open(path, 'w', encoding='utf-8') as f:
        f.write("\\data\\\n")
        for n in range(1, lm.order + 1):
            f.write(f"ngram {n}={len(by_order[n])}\n")
        for n in range(1, lm.order + 1):
            f.write(f"\n\\{n}-grams:\n")
            for ngram in sorted(by_order[n]):
                logprob = BOS_LOG10 if ngram == (BOS,) else lm.logprobs[ngram] * log10e
                line = f"{logprob:.10f}\t{' '.join(ngram)}"
                if ngram in lm.backoffs:
                    line += f"\t{lm.backoffs[ngram] * log10e:.10f}"
                f.write(line + "\n")
        f.write("\n\\end\\\n")


def read_arpa(path: str) -> NGramLM:
    """Load an ARPA file whose unigrams are the decimal token IDs 0..V−1 plus <s> and </s>"""
    logprobs: Dict[NGram, float] = {}
    backoffs: Dict[NGram, float] = {}
    declared: Dict[int, int] = {}
    section = None
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line == "\\data\\":
                section = 0
                continue
            if line == "\\end\\":
                break
            if line.startswith("\\") and line.endswith("-grams:"):
                section = int(line[1:line.index("-")])
                continue
            if section is None:
                raise ValidationError(f"{path}:{line_number}: content before \\data\\")
            if section == 0:
                if not line.startswith("ngram"):
                    raise ValidationError(f"{path}:{line_number}: malformed ARPA header")
                name, count = line.split("=")
                declared[int(name.split()[-1])] = int(count)
                continue
            fields = line.split()
            ngram = tuple(fields[1:1 + section])
            rest = fields[1 + section:]
            if len(ngram) != section:
                raise ValidationError(f"{path}:{line_number}: expected a {section}-gram")
            try:
                logprobs[ngram] = float(fields[0]) / math.log10(math.e)
                if rest:
                    backoffs[ngram] = float(rest[0]) / math.log10(math.e)
            except ValueError:
                raise ValidationError(f"{path}:{line_number}: malformed n-gram line")

    if not declared:
        raise ValidationError(f"{path} is not an ARPA file")
    for n, count in declared.items():
        found = sum(1 for ngram in logprobs if len(ngram) == n)
        if found != count:
            raise ValidationError(f"{path}: header declares {count} {n}-grams, found {found}")

    words = [w[0] for w in logprobs if len(w) == 1 and w[0] not in (BOS, EOS)]
    tokens = sorted(int(w) for w in words if w.isdigit())
    if len(tokens) != len(words) or tokens != list(range(len(tokens))) or (EOS,) not in logprobs:
        raise ValidationError(f"{path}: unigrams must be the token IDs 0..V-1 plus </s>")
    return NGramLM(order=max(declared), vocab_size=len(tokens), logprobs=logprobs, backoffs=backoffs)
