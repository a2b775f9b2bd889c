"""
Training
Joint streaming/full-context training: learning-rate schedule, Adam,
gradient clipping, the per-batch step, the epoch loop with validation and
checkpointing, and the bridge ablation experiment.
"""

import copy
import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..common import (
    BRIDGE_KINDS, REPORT_CHUNKS, Config, LossBreakdown, NumericError, UnifiedASRError,
    Utterance, ValidationError, format_chunk,
)
from .analysis import CERRow, cer
from .checkpoint import Checkpoint, averaged_checkpoint, save_checkpoint
from .data import Batch, batches, make_batch, spec_augment
from .decoding import ctc_greedy_search, decode_corpus, first_pass_best, inference_params
from .losses import batch_aed_loss, batch_bridge_loss, batch_ctc_loss, joint_loss
from .masking import sample_chunk
from .model import EncoderOutput, Parameters, ctc_head, decoder_forward, decoder_inputs, encode_batch, init_params
from .ngram import NGramLM

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.98
ADAM_EPS = 1e-9

STEP_COLUMNS = ['step', 'epoch', 'chunk', 'lr', 'ctc_s', 'aed_s', 'ctc_ns', 'aed_ns', 'bridge', 'total']
EPOCH_COLUMNS = ['epoch', 'step', 'val_loss', 'cer_full', 'cer_chunk']


def lr_schedule(step: int, peak: float, warmup: int) -> float:
    """Linear warmup to peak, then inverse-square-root decay"""
    if warmup < 1:
        raise ValidationError("warmup_steps must be ≥ 1")
    if step <= 0:
        return 0.0
    return peak * min(step / warmup, math.sqrt(warmup / step))


def clip_grad_norm(params: Parameters, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm; returns the norm before clipping"""
    grads = [t.grad for t in params.values() if t.grad is not None]
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
    if not math.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for tensor in params.values():
            if tensor.grad is not None:
                tensor.grad = tensor.grad * scale
    return norm


class AdamOptimizer:
    """Adam with bias correction; the only code that mutates parameters"""

    def __init__(self, params: Parameters, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 eps: float = ADAM_EPS):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m = {name: np.zeros_like(t.values) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.values) for name, t in params.items()}

    def step(self, lr: float):
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for name, tensor in self.params.items():
            if tensor.grad is None:
                continue
            grad = tensor.grad
            self._m[name] = self.beta1 * self._m[name] + (1.0 - self.beta1) * grad
            self._v[name] = self.beta2 * self._v[name] + (1.0 - self.beta2) * grad * grad
            update = (self._m[name] / correction1) / (np.sqrt(self._v[name] / correction2) + self.eps)
            tensor.assign_(tensor.values - lr * update)

    def zero_grad(self):
        for tensor in self.params.values():
            tensor.zero_grad()


@dataclass
class RngStreams:
    """Independent generators spawned from one seed"""
    data: np.random.Generator
    chunk: np.random.Generator
    distractors: np.random.Generator
    dropout: np.random.Generator
    augment: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> 'RngStreams':
        children = np.random.SeedSequence(seed).spawn(5)
        return cls(*(np.random.default_rng(child) for child in children))


@dataclass
class TrainLog:
    """Append-only per-step loss rows and per-epoch validation rows"""
    steps: List[Dict[str, object]] = field(default_factory=list)
    epochs: List[Dict[str, object]] = field(default_factory=list)

    def add_step(self, step: int, epoch: int, chunk: Optional[int], lr: float, breakdown: LossBreakdown):
        row = {'step': step, 'epoch': epoch, 'chunk': format_chunk(chunk), 'lr': lr}
        row.update(breakdown.as_row())
        self.steps.append(row)

    def add_epoch(self, epoch: int, step: int, val_loss: float, cer_full: float, cer_chunk: float):
        self.epochs.append({'epoch': epoch, 'step': step, 'val_loss': val_loss,
                            'cer_full': cer_full, 'cer_chunk': cer_chunk})

    def write(self, directory: str):
        """train_log.csv and validation.csv; floats use repr so reruns compare byte-for-byte"""
        os.makedirs(directory, exist_ok=True)
        for name, columns, rows in (('train_log.csv', STEP_COLUMNS, self.steps),
                                    ('validation.csv', EPOCH_COLUMNS, self.epochs)):
            with open(os.path.join(directory, name), 'w', newline='', encoding='utf-8') as f:
                writer = csv.DictWriter(f, fieldnames=columns)
                writer.writeheader()
                for row in rows:
                    writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def assert_shared_weights(params: Parameters, *outputs: EncoderOutput):
    """Both encoder passes must have read the very same parameter tensors"""
    expected = frozenset(id(t) for name, t in params.items() if name.startswith("encoder."))
    for output in outputs:
        if output.param_ids != expected:
            raise UnifiedASRError("streaming and full-context passes read different parameter tensors")


def branch_losses(output: EncoderOutput, batch: Batch, params: Parameters, config: Config,
                  rng: Optional[np.random.Generator] = None):
    """CTC and attention losses of one encoder pass"""
    ctc = batch_ctc_loss(ctc_head(output, params), output.lengths, batch.tokens)
    prev, targets = decoder_inputs(batch.tokens, config.model.vocab)
    logits = decoder_forward(output, prev, params, config.model, rng)
    return ctc, batch_aed_loss(logits, targets, config.model.label_smoothing)


def train_step(batch: Batch, params: Parameters, config: Config, optimizer: AdamOptimizer,
               streams: RngStreams, lr: float, step: int = 0) -> LossBreakdown:
    """One streaming draw, two encoder passes, one backward pass and one Adam update"""
    train = config.train
    chunk = sample_chunk(train.chunk_policy, streams.chunk)
    try:
        out_s = encode_batch(batch.frames, batch.lengths, chunk, params, config.model, streams.dropout)
        out_ns = encode_batch(batch.frames, batch.lengths, None, params, config.model, streams.dropout)
        assert_shared_weights(params, out_s, out_ns)
        ctc_s, aed_s = branch_losses(out_s, batch, params, config, streams.dropout)
        ctc_ns, aed_ns = branch_losses(out_ns, batch, params, config, streams.dropout)
        bridge = batch_bridge_loss(out_s.hidden, out_ns.hidden, out_s.lengths, train.contrastive,
                                   streams.distractors)
        breakdown = joint_loss(ctc_s, aed_s, ctc_ns, aed_ns, bridge, train.ctc_weight,
                               train.contrastive.bridge, train.contrastive.ctl_weight)
        optimizer.zero_grad()
        breakdown.objective.backward()
        clip_grad_norm(params, train.grad_clip)
        optimizer.step(lr)
    except NumericError as e:
        raise NumericError(f"step {step} (chunk {format_chunk(chunk)}, utterances {batch.ids[:4]}): {e}")
    breakdown.chunk = chunk
    return breakdown


@dataclass
class ValidationResult:
    """ASR-only validation loss (bridge excluded) and greedy CTC error rates"""
    loss: float
    cer_full: float
    cer_chunk: float


def validate(corpus: Sequence[Utterance], params: Parameters, config: Config) -> ValidationResult:
    train = config.train
    frozen = inference_params(params)
    total, count = 0.0, 0
    refs, hyps_full, hyps_chunk = [], [], []
    for batch in batches(corpus, train.batch_size):
        out_s = encode_batch(batch.frames, batch.lengths, train.validation_chunk, frozen, config.model)
        out_ns = encode_batch(batch.frames, batch.lengths, None, frozen, config.model)
        ctc_s, aed_s = branch_losses(out_s, batch, frozen, config)
        ctc_ns, aed_ns = branch_losses(out_ns, batch, frozen, config)
        breakdown = joint_loss(ctc_s, aed_s, ctc_ns, aed_ns, None, train.ctc_weight)
        total += breakdown.total * batch.size
        count += batch.size
        logp_s = ctc_head(out_s, frozen).values
        logp_ns = ctc_head(out_ns, frozen).values
        for row, tokens in enumerate(batch.tokens):
            length = int(out_s.lengths[row])
            refs.append(tokens)
            hyps_chunk.append(ctc_greedy_search(logp_s[row, :length]))
            hyps_full.append(ctc_greedy_search(logp_ns[row, :length]))
    if count == 0:
        raise ValidationError("validation corpus is empty")
    return ValidationResult(loss=total / count, cer_full=cer(refs, hyps_full), cer_chunk=cer(refs, hyps_chunk))


@dataclass
class TrainResult:
    """Averaged parameters plus everything the run wrote"""
    params: Parameters
    log: TrainLog
    checkpoints: List[str]
    average_path: str
    validation: ValidationResult


class Trainer:
    """Epoch loop: shuffled batches, train steps, validation, per-epoch checkpoints, top-k average"""

    def __init__(self, config: Config, train_corpus: Sequence[Utterance], valid_corpus: Sequence[Utterance],
                 out_dir: str, logger=None,
                 on_step: Optional[Callable[[int, int, int, LossBreakdown], None]] = None,
                 on_epoch: Optional[Callable[[int, ValidationResult], None]] = None):
        config.validate()
        if not train_corpus:
            raise ValidationError("training corpus is empty")
        if not valid_corpus:
            raise ValidationError("validation corpus is empty")
        for utterance in list(train_corpus) + list(valid_corpus):
            config.model.vocab.check_tokens(utterance.tokens)
            if utterance.feature_dim != config.model.feature_dim:
                raise ValidationError(
                    f"utterance {utterance.id} has {utterance.feature_dim} features, model expects "
                    f"{config.model.feature_dim}")
        self.config = config
        self.train_corpus = list(train_corpus)
        self.valid_corpus = list(valid_corpus)
        self.out_dir = out_dir
        self.logger = logger
        self.on_step = on_step
        self.on_epoch = on_epoch

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.train_corpus) / self.config.train.batch_size)

    def _log(self, message: str):
        if self.logger:
            self.logger.log_info(message, "training")

    def _epoch_batches(self, streams: RngStreams):
        train = self.config.train
        order = streams.data.permutation(len(self.train_corpus))
        for start in range(0, len(order), train.batch_size):
            utterances = [self.train_corpus[i] for i in order[start:start + train.batch_size]]
            if not train.augment.is_identity:
                utterances = [spec_augment(u, train.augment, streams.augment) for u in utterances]
            yield make_batch(utterances)

    def run(self, params: Optional[Parameters] = None) -> TrainResult:
        config, train = self.config, self.config.train
        streams = RngStreams.from_seed(config.seed)
        params = params if params is not None else init_params(config.seed, config.model)
        optimizer = AdamOptimizer(params)
        checkpoint_dir = os.path.join(self.out_dir, train.checkpoint_dir)
        log = TrainLog()
        paths = []
        step = 0
        self._log(f"training {len(self.train_corpus)} utterances, bridge={train.contrastive.bridge}, "
                  f"seed={config.seed}")

        for epoch in range(1, train.epochs + 1):
            for index, batch in enumerate(self._epoch_batches(streams)):
                step += 1
                lr = lr_schedule(step, train.peak_lr, train.warmup_steps)
                breakdown = train_step(batch, params, config, optimizer, streams, lr, step)
                log.add_step(step, epoch, breakdown.chunk, lr, breakdown)
                if self.on_step:
                    self.on_step(epoch, index + 1, self.steps_per_epoch, breakdown)

            result = validate(self.valid_corpus, params, config)
            log.add_epoch(epoch, step, result.loss, result.cer_full, result.cer_chunk)
            path = os.path.join(checkpoint_dir, f"epoch_{epoch:03d}.ckpt")
            save_checkpoint(Checkpoint(config=config.model, params=params, val_loss=result.loss, step=step), path)
            paths.append(path)
            log.write(self.out_dir)
            if self.logger:
                self.logger.log_metrics("training", {
                    "epoch": epoch, "step": step, "val_loss": result.loss, "cer_full": result.cer_full,
                    f"cer_chunk{train.validation_chunk}": result.cer_chunk,
                })
            if self.on_epoch:
                self.on_epoch(epoch, result)

        averaged = averaged_checkpoint(paths, min(train.top_k, len(paths)))
        final = validate(self.valid_corpus, averaged.params, config)
        average_path = os.path.join(checkpoint_dir, "average.ckpt")
        save_checkpoint(Checkpoint(config=config.model, params=averaged.params,
                                   val_loss=final.loss, step=averaged.step), average_path)
        self._log(f"averaged top {min(train.top_k, len(paths))} checkpoints: val_loss={final.loss:.4f}")
        return TrainResult(params=averaged.params, log=log, checkpoints=paths,
                           average_path=average_path, validation=final)


# Ablation experiment
@dataclass
class ExperimentRow:
    bridge: str
    passes: int
    chunk: Optional[int]
    cer: float


@dataclass
class ExperimentReport:
    """CER per bridge setting, pass and chunk, plus each arm's first-step ASR loss"""
    rows: List[ExperimentRow]
    initial_asr_loss: Dict[str, float]
    chunks: List[Optional[int]]

    def cer(self, bridge: str, passes: int, chunk: Optional[int]) -> float:
        for row in self.rows:
            if (row.bridge, row.passes, row.chunk) == (bridge, passes, chunk):
                return row.cer
        raise KeyError((bridge, passes, chunk))

    @property
    def bridges(self) -> List[str]:
        return list(dict.fromkeys(row.bridge for row in self.rows))


def evaluate_cer(params: Parameters, config: Config, corpus: Sequence[Utterance],
                 chunks: Sequence[Optional[int]], lm: Optional[NGramLM] = None) -> List[CERRow]:
    """First- and second-pass CER for each chunk (None = full context)"""
    rows = []
    refs = [u.tokens for u in corpus]
    for chunk in chunks:
        dcfg = copy.deepcopy(config.decode)
        dcfg.chunk = chunk
        dcfg.passes = 2
        results = decode_corpus(corpus, params, config.model, dcfg, lm)
        mode = "full" if chunk is None else "streaming"
        pass_one = [list(first_pass_best(r, dcfg.lm_weight).tokens) for r in results]
        pass_two = [list(r.best.tokens) for r in results]
        rows.append(CERRow(mode=mode, chunk=chunk, passes=1, cer=cer(refs, pass_one)))
        rows.append(CERRow(mode=mode, chunk=chunk, passes=2, cer=cer(refs, pass_two)))
    return rows


def run_experiment(config: Config, bridges: Sequence[str], train_corpus: Sequence[Utterance],
                   valid_corpus: Sequence[Utterance], test_corpus: Sequence[Utterance], out_dir: str,
                   chunks: Sequence[Optional[int]] = REPORT_CHUNKS, lm: Optional[NGramLM] = None,
                   logger=None, on_step=None, on_epoch=None) -> ExperimentReport:
    """Train one arm per bridge setting from the same seed and compare their CERs"""
    if not bridges:
        raise ValidationError("experiment needs at least one bridge setting")
    unknown = [b for b in bridges if b not in BRIDGE_KINDS]
    if unknown:
        raise ValidationError(f"unknown bridge settings: {', '.join(unknown)}")

    rows: List[ExperimentRow] = []
    initial: Dict[str, float] = {}
    for bridge in bridges:
        arm = copy.deepcopy(config)
        arm.train.contrastive.bridge = bridge
        trainer = Trainer(arm, train_corpus, valid_corpus, os.path.join(out_dir, bridge), logger,
                          on_step, on_epoch)
        result = trainer.run()
        first = result.log.steps[0]
        lam = arm.train.ctc_weight
        initial[bridge] = (lam * first['ctc_s'] + (1 - lam) * first['aed_s']
                           + lam * first['ctc_ns'] + (1 - lam) * first['aed_ns'])
        for row in evaluate_cer(result.params, arm, test_corpus, chunks, lm):
            rows.append(ExperimentRow(bridge=bridge, passes=row.passes, chunk=row.chunk, cer=row.cer))

    report = ExperimentReport(rows=rows, initial_asr_loss=initial, chunks=list(chunks))
    write_experiment_report(report, out_dir)
    return report


def write_experiment_report(report: ExperimentReport, out_dir: str):
    """report.csv (bridge, pass, chunk, cer) and a Markdown table with one column per chunk"""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.csv"), 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['bridge', 'pass', 'chunk', 'cer'])
        for row in report.rows:
            writer.writerow([row.bridge, row.passes, format_chunk(row.chunk), f"{row.cer:.6f}"])

    header = "| bridge | pass | " + " | ".join(format_chunk(c) for c in report.chunks) + " |"
    lines = ["# Bridge ablation (CER)", "", header, "|" + "---|" * (len(report.chunks) + 2)]
    for bridge in report.bridges:
        for passes in (1, 2):
            cells = [f"{report.cer(bridge, passes, c):.4f}" for c in report.chunks]
            lines.append(f"| {bridge} | {passes} | " + " | ".join(cells) + " |")
    lines += ["", "First-step ASR loss per arm:", ""]
    lines += [f"- {bridge}: {loss:.6f}" for bridge, loss in report.initial_asr_loss.items()]
    with open(os.path.join(out_dir, "report.md"), 'w', encoding='utf-8') as f:
        f.write("\n".join(lines) + "\n")
