"""
Common constants, types and utilities
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

VERSION = "1.0.0"

# Color constants - Lime theme
LIME_PRIMARY = "#32CD32"    # Main lime green
LIME_SECONDARY = "#9AFF9A"  # Light lime green
LIME_ACCENT = "#00FF00"     # Bright green accent

# Material Design color palette - harmonized
MAT_PRIMARY = "#4CAF50"       # Material Green 500
MAT_ACCENT = "#00BCD4"        # Material Cyan 500
MAT_TEXT_HINT = "#BDBDBD"     # Material Grey 400
MAT_ERROR = "#F44336"         # Material Red 500

# Front-end geometry: two kernel-3 / stride-2 stages
SUBSAMPLE_KERNEL = 3
SUBSAMPLE_STRIDE = 2
MIN_FRAMES = 7

MAX_CHUNK = 25
VALIDATION_CHUNK = 4
REPORT_CHUNKS: Tuple[Optional[int], ...] = (None, 16, 8, 4)
GAP_CHUNKS: Tuple[int, ...] = (16, 8, 4, 1)

BRIDGE_NONE = "none"
BRIDGE_L2 = "l2"
BRIDGE_CONTRASTIVE = "contrastive"
BRIDGE_KINDS = (BRIDGE_NONE, BRIDGE_L2, BRIDGE_CONTRASTIVE)

CHUNK_FULL = "full"
CHUNK_FIXED = "fixed"
CHUNK_DYNAMIC = "dynamic"


# Errors
class UnifiedASRError(Exception):
    """Base class for all errors raised by the package"""


class ValidationError(UnifiedASRError):
    """Invalid parameters, inputs or files"""


class NumericError(UnifiedASRError):
    """Non-finite values or ill-posed numeric operations"""


class CorpusFormatError(ValidationError):
    """Malformed corpus file"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class CheckpointError(ValidationError):
    """Unreadable or incompatible checkpoint"""


def _check_keys(cls, data: Dict[str, Any]):
    """Reject keys that are not fields of a config dataclass"""
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")


# Data structures
@dataclass(frozen=True)
class VocabSpec:
    """Token inventory; blank and sos/eos are reserved past the real tokens"""
    size: int = 12

    @property
    def blank_id(self) -> int:
        return self.size

    @property
    def sos_id(self) -> int:
        return self.size + 1

    @property
    def eos_id(self) -> int:
        return self.size + 1

    @property
    def ctc_dim(self) -> int:
        return self.size + 1

    @property
    def decoder_dim(self) -> int:
        return self.size + 2

    def validate(self):
        if self.size < 1:
            raise ValidationError("vocabulary size must be ≥ 1")

    def check_tokens(self, tokens: Sequence[int]):
        """Raise if a transcript holds a reserved or out-of-range ID"""
        for token in tokens:
            if not 0 <= token < self.size:
                raise ValidationError(f"token {token} outside vocabulary [0, {self.size})")


@dataclass
class Utterance:
    """Acoustic frames plus token transcript"""
    id: str
    frames: np.ndarray
    tokens: List[int]

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.frames.shape[1])


@dataclass
class AugmentPolicy:
    """Simplified SpecAugment settings"""
    num_time_masks: int = 0
    max_time_mask_width: int = 0
    num_freq_masks: int = 0
    max_freq_mask_width: int = 0

    @property
    def is_identity(self) -> bool:
        return self.num_time_masks == 0 and self.num_freq_masks == 0

    def validate(self):
        values = (self.num_time_masks, self.max_time_mask_width,
                  self.num_freq_masks, self.max_freq_mask_width)
        if any(v < 0 for v in values):
            raise ValidationError("augmentation counts and widths must be ≥ 0")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AugmentPolicy':
        _check_keys(cls, data)
        return cls(**data)


@dataclass
class ChunkPolicy:
    """How the streaming branch picks its chunk size"""
    mode: str = CHUNK_DYNAMIC
    chunk_size: int = VALIDATION_CHUNK
    max_chunk: int = MAX_CHUNK
    p_full: float = 0.5

    def validate(self):
        if self.mode not in (CHUNK_FULL, CHUNK_FIXED, CHUNK_DYNAMIC):
            raise ValidationError(f"unknown chunk policy mode: {self.mode}")
        if self.max_chunk < 1:
            raise ValidationError("max_chunk must be ≥ 1")
        if self.mode == CHUNK_FIXED and not 1 <= self.chunk_size <= self.max_chunk:
            raise ValidationError("fixed chunk size must lie in [1, max_chunk]")
        if not 0.0 <= self.p_full <= 1.0:
            raise ValidationError("p_full must lie in [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ChunkPolicy':
        _check_keys(cls, data)
        return cls(**data)


@dataclass
class ModelConfig:
    """Architecture hyperparameters (desk-scale defaults)"""
    feature_dim: int = 16
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    conv_kernel: int = 7
    vocab_size: int = 12
    dropout: float = 0.0
    label_smoothing: float = 0.1

    @property
    def vocab(self) -> VocabSpec:
        return VocabSpec(self.vocab_size)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def validate(self):
        dims = (self.feature_dim, self.d_model, self.n_heads, self.d_ff,
                self.n_enc_layers, self.n_dec_layers, self.conv_kernel, self.vocab_size)
        if any(d < 1 for d in dims):
            raise ValidationError("all model dimensions must be ≥ 1")
        if self.d_model % self.n_heads != 0:
            raise ValidationError("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValidationError("label_smoothing must lie in [0, 1)")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelConfig':
        _check_keys(cls, data)
        return cls(**data)


@dataclass
class ContrastiveConfig:
    """Bridge term between streaming and full-context representations"""
    bridge: str = BRIDGE_CONTRASTIVE
    temperature: float = 0.4
    num_distractors: int = 16
    ctl_weight: float = 1.0
    stop_gradient: bool = False
    l2_stop_gradient: bool = True

    def validate(self):
        if self.bridge not in BRIDGE_KINDS:
            raise ValidationError(f"bridge must be one of {', '.join(BRIDGE_KINDS)}")
        if self.temperature <= 0:
            raise ValidationError("temperature must be > 0")
        if self.bridge == BRIDGE_CONTRASTIVE and self.num_distractors < 1:
            raise ValidationError("num_distractors must be ≥ 1 for the contrastive bridge")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ContrastiveConfig':
        _check_keys(cls, data)
        return cls(**data)


@dataclass
class DataConfig:
    """Synthetic corpus settings"""
    n_utts: int = 600
    n_test: int = 100
    noise_sigma: float = 0.15

    def validate(self):
        if self.n_utts < 1:
            raise ValidationError("n_utts must be ≥ 1")
        if not 0 <= self.n_test < self.n_utts:
            raise ValidationError("n_test must lie in [0, n_utts)")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be ≥ 0")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DataConfig':
        _check_keys(cls, data)
        return cls(**data)


@dataclass
class TrainConfig:
    """Joint training settings"""
    epochs: int = 30
    batch_size: int = 8
    peak_lr: float = 1e-3
    warmup_steps: int = 500
    ctc_weight: float = 0.3
    grad_clip: float = 5.0
    top_k: int = 3
    checkpoint_dir: str = "checkpoints"
    validation_chunk: int = VALIDATION_CHUNK
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    chunk_policy: ChunkPolicy = field(default_factory=lambda: ChunkPolicy(p_full=0.0))
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)

    def validate(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be ≥ 1")
        if self.warmup_steps < 1:
            raise ValidationError("warmup_steps must be ≥ 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be ≥ 1")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValidationError("ctc_weight (λ) must lie in [0, 1]")
        if self.top_k < 1:
            raise ValidationError("top_k must be ≥ 1")
        if self.peak_lr < 0:
            raise ValidationError("peak_lr must be ≥ 0")
        self.contrastive.validate()
        self.chunk_policy.validate()
        self.augment.validate()

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        _check_keys(cls, data)
        data = dict(data)
        if 'contrastive' in data:
            data['contrastive'] = ContrastiveConfig.from_dict(data['contrastive'])
        if 'chunk_policy' in data:
            data['chunk_policy'] = ChunkPolicy.from_dict(data['chunk_policy'])
        if 'augment' in data:
            data['augment'] = AugmentPolicy.from_dict(data['augment'])
        return cls(**data)


@dataclass
class DecodeConfig:
    """Two-pass decoding settings; chunk None means full context"""
    chunk: Optional[int] = None
    passes: int = 2
    beam: int = 10
    lm_path: Optional[str] = None
    lm_weight: float = 0.0
    ctc_weight: float = 0.5
    workers: int = 1
    rescore_full_context: bool = False

    def validate(self):
        if self.chunk is not None and self.chunk < 1:
            raise ValidationError("chunk must be ≥ 1 or 'full'")
        if self.passes not in (1, 2):
            raise ValidationError("pass must be 1 or 2")
        if self.beam < 1:
            raise ValidationError("beam must be ≥ 1")
        if self.workers < 1:
            raise ValidationError("workers must be ≥ 1")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DecodeConfig':
        _check_keys(cls, data)
        return cls(**data)


@dataclass
class AnalysisConfig:
    """Representation-gap analysis settings"""
    chunks: List[int] = field(default_factory=lambda: list(GAP_CHUNKS))
    sample_size: int = 20

    def validate(self):
        if not self.chunks or any(c < 1 for c in self.chunks):
            raise ValidationError("analysis chunks must all be ≥ 1")
        if self.sample_size < 1:
            raise ValidationError("sample_size must be ≥ 1")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AnalysisConfig':
        _check_keys(cls, data)
        return cls(**data)


@dataclass
class Config:
    """Configuration data structure"""
    seed: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    enable_logging: bool = False
    log_file: Optional[str] = None

    def validate(self):
        self.model.validate()
        self.data.validate()
        self.train.validate()
        self.decode.validate()
        self.analysis.validate()

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Config':
        _check_keys(cls, data)
        data = dict(data)
        sections = {
            'model': ModelConfig,
            'data': DataConfig,
            'train': TrainConfig,
            'decode': DecodeConfig,
            'analysis': AnalysisConfig,
        }
        for key, section in sections.items():
            if key in data:
                data[key] = section.from_dict(data[key])
        return cls(**data)


@dataclass
class LossBreakdown:
    """Per-batch mean loss terms; total follows the joint objective"""
    ctc_s: float
    aed_s: float
    ctc_ns: float
    aed_ns: float
    bridge: float
    total: float
    bridge_kind: str = BRIDGE_NONE
    objective: Any = field(default=None, repr=False, compare=False)
    chunk: Optional[int] = field(default=None, compare=False)

    def recompute_total(self, ctc_weight: float, ctl_weight: float = 1.0) -> float:
        """Rebuild the total from the components"""
        asr_s = ctc_weight * self.ctc_s + (1.0 - ctc_weight) * self.aed_s
        asr_ns = ctc_weight * self.ctc_ns + (1.0 - ctc_weight) * self.aed_ns
        return asr_s + asr_ns + ctl_weight * self.bridge

    def as_row(self) -> Dict[str, float]:
        return {
            'ctc_s': self.ctc_s,
            'aed_s': self.aed_s,
            'ctc_ns': self.ctc_ns,
            'aed_ns': self.aed_ns,
            'bridge': self.bridge,
            'total': self.total,
        }


@dataclass
class Hypothesis:
    """One decoding hypothesis flowing through both passes"""
    tokens: Tuple[int, ...]
    ctc_logscore: float
    lm_logscore: float = 0.0
    aed_logscore: Optional[float] = None
    combined: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'tokens': list(self.tokens),
            'ctc': self.ctc_logscore,
            'lm': self.lm_logscore,
            'aed': self.aed_logscore,
            'combined': self.combined,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Hypothesis':
        return cls(
            tokens=tuple(data['tokens']),
            ctc_logscore=data['ctc'],
            lm_logscore=data.get('lm', 0.0),
            aed_logscore=data.get('aed'),
            combined=data['combined'],
        )


@dataclass
class GapRow:
    """Gap statistics for one streaming chunk size"""
    chunk: int
    mean_cos: float
    sd_cos: float
    uniformity_s: float
    uniformity_ns: float


@dataclass
class GapReport:
    """Streaming vs. full-context representation gap"""
    rows: List[GapRow]
    projection_path: Optional[str] = None

    def row(self, chunk: int) -> GapRow:
        for row in self.rows:
            if row.chunk == chunk:
                return row
        raise KeyError(chunk)


@dataclass
class RunManifest:
    """Everything needed to re-run a command"""
    command: str
    config: Dict[str, Any]
    seed: int
    inputs: Dict[str, Optional[str]] = field(default_factory=dict)
    outputs: Dict[str, Optional[str]] = field(default_factory=dict)
    version: str = VERSION
    created: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


# Utility functions
def parse_chunk(value: Any) -> Optional[int]:
    """Parse a chunk flag: 'full' or a positive integer (None means full context)"""
    if value is None:
        return None
    if isinstance(value, str):
        if value.strip().lower() == CHUNK_FULL:
            return None
        try:
            value = int(value)
        except ValueError:
            raise ValidationError("chunk must be ≥ 1 or 'full'")
    if int(value) < 1:
        raise ValidationError("chunk must be ≥ 1 or 'full'")
    return int(value)


def format_chunk(chunk: Optional[int]) -> str:
    """Display form of a chunk size"""
    return CHUNK_FULL if chunk is None else str(chunk)


def subsampled_length(num_frames: int) -> int:
    """Length after the two kernel-3 / stride-2 front-end stages"""
    if num_frames < MIN_FRAMES:
        raise ValidationError(f"too short after subsampling: {num_frames} frames (need ≥ {MIN_FRAMES})")
    length = num_frames
    for _ in range(2):
        length = (length - SUBSAMPLE_KERNEL) // SUBSAMPLE_STRIDE + 1
    return length


def ctc_min_frames(tokens: Sequence[int]) -> int:
    """Frames needed to emit tokens under CTC (one blank between repeats)"""
    repeats = sum(1 for a, b in zip(tokens, tokens[1:]) if a == b)
    return len(tokens) + repeats
