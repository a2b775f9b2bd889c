"""
Model
Shared Conformer-lite encoder with a convolutional subsampling front-end,
Transformer-lite attention decoder and CTC head. One parameter set serves
both streaming and full-context modes; only the attention mask differs.
"""

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..common import (
    SUBSAMPLE_KERNEL, SUBSAMPLE_STRIDE, ModelConfig, ValidationError, subsampled_length,
)
from .masking import attention_mask, causal_mask, padding_mask
from .tensor import (
    Tensor, depthwise_conv1d, dropout, embedding, glu, layer_norm, linear, log_softmax,
    masked_softmax, conv1d, relu, swish, get_dtype,
)

Parameters = Dict[str, Tensor]

XAVIER = "xavier"
ZEROS = "zeros"
ONES = "ones"
EMBEDDING = "embedding"


@dataclass
class EncoderOutput:
    """Top-layer hidden frames [B, T′_max, d] with per-utterance lengths"""
    hidden: Tensor
    lengths: np.ndarray
    param_ids: FrozenSet[int] = frozenset()

    @property
    def batch_size(self) -> int:
        return int(self.hidden.shape[0])

    def sequence(self, index: int = 0) -> Tensor:
        """[T′, d] frames of one utterance, padding removed"""
        return self.hidden[index, :int(self.lengths[index])]

    @property
    def H(self) -> Tensor:
        if self.batch_size != 1:
            raise ValidationError("H is only defined for single-utterance outputs")
        return self.sequence(0)


def sub_len(num_frames: int) -> int:
    """Post-subsampling length T′ = L(L(T)), L(n) = floor((n − 3) / 2) + 1"""
    return subsampled_length(num_frames)


# Parameter layout
def _linear_shapes(prefix: str, fan_in: int, fan_out: int) -> List[Tuple[str, Tuple[int, ...], str]]:
    return [
        (f"{prefix}.weight", (fan_in, fan_out), XAVIER),
        (f"{prefix}.bias", (fan_out,), ZEROS),
    ]


def _norm_shapes(prefix: str, dim: int) -> List[Tuple[str, Tuple[int, ...], str]]:
    return [
        (f"{prefix}.gamma", (dim,), ONES),
        (f"{prefix}.beta", (dim,), ZEROS),
    ]


def _attention_shapes(prefix: str, d: int) -> List[Tuple[str, Tuple[int, ...], str]]:
    shapes = _norm_shapes(f"{prefix}.norm", d)
    for name in ("query", "key", "value", "out"):
        shapes += _linear_shapes(f"{prefix}.{name}", d, d)
    return shapes


def _ffn_shapes(prefix: str, d: int, d_ff: int) -> List[Tuple[str, Tuple[int, ...], str]]:
    return (_norm_shapes(f"{prefix}.norm", d)
            + _linear_shapes(f"{prefix}.linear1", d, d_ff)
            + _linear_shapes(f"{prefix}.linear2", d_ff, d))


def param_layout(config: ModelConfig) -> "OrderedDict[str, Tuple[Tuple[int, ...], str]]":
    """Canonical parameter names, shapes and init kinds; determined by config alone"""
    config.validate()
    d, d_ff, k = config.d_model, config.d_ff, SUBSAMPLE_KERNEL
    vocab = config.vocab
    shapes: List[Tuple[str, Tuple[int, ...], str]] = [
        ("encoder.embed.conv1.weight", (k, config.feature_dim, d), XAVIER),
        ("encoder.embed.conv1.bias", (d,), ZEROS),
        ("encoder.embed.conv2.weight", (k, d, d), XAVIER),
        ("encoder.embed.conv2.bias", (d,), ZEROS),
    ]
    shapes += _linear_shapes("encoder.embed.out", d, d)
    for layer in range(config.n_enc_layers):
        prefix = f"encoder.layers.{layer}"
        shapes += _ffn_shapes(f"{prefix}.ffn1", d, d_ff)
        shapes += _attention_shapes(f"{prefix}.attn", d)
        shapes += _norm_shapes(f"{prefix}.conv.norm", d)
        shapes += _linear_shapes(f"{prefix}.conv.pointwise1", d, 2 * d)
        shapes += [
            (f"{prefix}.conv.depthwise.weight", (config.conv_kernel, d), XAVIER),
            (f"{prefix}.conv.depthwise.bias", (d,), ZEROS),
        ]
        shapes += _linear_shapes(f"{prefix}.conv.pointwise2", d, d)
        shapes += _ffn_shapes(f"{prefix}.ffn2", d, d_ff)
        shapes += _norm_shapes(f"{prefix}.final_norm", d)
    shapes += _linear_shapes("ctc", d, vocab.ctc_dim)
    shapes.append(("decoder.embed.table", (vocab.decoder_dim, d), EMBEDDING))
    for layer in range(config.n_dec_layers):
        prefix = f"decoder.layers.{layer}"
        shapes += _attention_shapes(f"{prefix}.self_attn", d)
        shapes += _attention_shapes(f"{prefix}.cross_attn", d)
        shapes += _ffn_shapes(f"{prefix}.ffn", d, d_ff)
    shapes += _norm_shapes("decoder.final_norm", d)
    shapes += _linear_shapes("decoder.out", d, vocab.decoder_dim)
    return OrderedDict((name, (shape, kind)) for name, shape, kind in shapes)


def xavier_bound(shape: Sequence[int]) -> float:
    """Xavier-uniform bound; kernels [K, C_in, C_out] count K·C on both sides"""
    if len(shape) == 3:
        fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
    else:
        fan_in, fan_out = shape[0], shape[1]
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(seed: int, config: ModelConfig) -> Parameters:
    """Xavier-uniform weights, zero biases, N(0, d^-0.5) embeddings; deterministic per seed"""
    rng = np.random.default_rng(seed)
    dtype = get_dtype()
    params: Parameters = OrderedDict()
    for name, (shape, kind) in param_layout(config).items():
        if kind == XAVIER:
            bound = xavier_bound(shape)
            values = rng.uniform(-bound, bound, size=shape)
        elif kind == EMBEDDING:
            values = rng.normal(0.0, config.d_model ** -0.5, size=shape)
        elif kind == ONES:
            values = np.ones(shape)
        else:
            values = np.zeros(shape)
        params[name] = Tensor(values, requires_grad=True, dtype=dtype)
    return params


def check_params(params: Parameters, config: ModelConfig):
    """Raise unless params match the config's layout exactly"""
    layout = param_layout(config)
    if set(params) != set(layout):
        missing = sorted(set(layout) - set(params))
        extra = sorted(set(params) - set(layout))
        raise ValidationError(f"parameter names do not match config (missing {missing[:3]}, extra {extra[:3]})")
    for name, (shape, _) in layout.items():
        if params[name].shape != tuple(shape):
            raise ValidationError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


# Building blocks
def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Absolute sinusoidal encoding [length, dim]"""
    position = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(position * rates)
    table[:, 1::2] = np.cos(position * rates[:dim // 2])
    return table


def _linear(x: Tensor, params: Parameters, prefix: str) -> Tensor:
    return linear(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def _norm(x: Tensor, params: Parameters, prefix: str) -> Tensor:
    return layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def _feed_forward(x: Tensor, params: Parameters, prefix: str, activation,
                  rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    hidden = activation(_linear(_norm(x, params, f"{prefix}.norm"), params, f"{prefix}.linear1"))
    hidden = dropout(hidden, rate, rng)
    return _linear(hidden, params, f"{prefix}.linear2")


def multi_head_attention(query: Tensor, memory: Tensor, mask: np.ndarray, params: Parameters,
                         prefix: str, n_heads: int) -> Tensor:
    """Scaled dot-product attention; mask is [B, T_q, T_k]"""
    batch, t_query, d = query.shape
    t_key = memory.shape[1]
    head_dim = d // n_heads

    def heads(x: Tensor, length: int) -> Tensor:
        return x.reshape(batch, length, n_heads, head_dim).transpose(0, 2, 1, 3)

    q = heads(_linear(query, params, f"{prefix}.query"), t_query)
    k = heads(_linear(memory, params, f"{prefix}.key"), t_key)
    v = heads(_linear(memory, params, f"{prefix}.value"), t_key)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(head_dim))
    probs = masked_softmax(scores, mask[:, None, :, :])
    context = (probs @ v).transpose(0, 2, 1, 3).reshape(batch, t_query, d)
    return _linear(context, params, f"{prefix}.out")


def _conv_module(x: Tensor, params: Parameters, prefix: str) -> Tensor:
    """Pointwise-GLU, depthwise causal conv, Swish, pointwise"""
    hidden = glu(_linear(_norm(x, params, f"{prefix}.norm"), params, f"{prefix}.pointwise1"))
    hidden = depthwise_conv1d(hidden, params[f"{prefix}.depthwise.weight"]) + params[f"{prefix}.depthwise.bias"]
    return _linear(swish(hidden), params, f"{prefix}.pointwise2")


def _conformer_block(x: Tensor, mask: np.ndarray, params: Parameters, prefix: str,
                     config: ModelConfig, rng: Optional[np.random.Generator]) -> Tensor:
    x = x + 0.5 * _feed_forward(x, params, f"{prefix}.ffn1", swish, config.dropout, rng)
    normed = _norm(x, params, f"{prefix}.attn.norm")
    x = x + dropout(multi_head_attention(normed, normed, mask, params, f"{prefix}.attn", config.n_heads),
                    config.dropout, rng)
    x = x + dropout(_conv_module(x, params, f"{prefix}.conv"), config.dropout, rng)
    x = x + 0.5 * _feed_forward(x, params, f"{prefix}.ffn2", swish, config.dropout, rng)
    return _norm(x, params, f"{prefix}.final_norm")


def _subsample(frames: Tensor, params: Parameters, config: ModelConfig) -> Tensor:
    hidden = conv1d(frames, params["encoder.embed.conv1.weight"], stride=SUBSAMPLE_STRIDE)
    hidden = relu(hidden + params["encoder.embed.conv1.bias"])
    hidden = conv1d(hidden, params["encoder.embed.conv2.weight"], stride=SUBSAMPLE_STRIDE)
    hidden = relu(hidden + params["encoder.embed.conv2.bias"])
    hidden = _linear(hidden, params, "encoder.embed.out")
    length = hidden.shape[1]
    position = positional_encoding(length, config.d_model).astype(hidden.dtype)
    return hidden * math.sqrt(config.d_model) + position


# Operations
def encode_batch(frames: np.ndarray, lengths: Sequence[int], chunk: Optional[int], params: Parameters,
                 config: ModelConfig, rng: Optional[np.random.Generator] = None) -> EncoderOutput:
    """Encode a zero-padded [B, T, F] batch with a chunk (or full, chunk=None) mask"""
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.shape[2] != config.feature_dim:
        raise ValidationError(f"expected frames [B, T, {config.feature_dim}], got {frames.shape}")
    if chunk is not None and chunk < 1:
        raise ValidationError("chunk must be ≥ 1 or 'full'")
    out_lengths = np.array([sub_len(int(n)) for n in lengths], dtype=np.int64)
    max_length = sub_len(frames.shape[1])

    hidden = _subsample(Tensor(frames), params, config)
    hidden = dropout(hidden, config.dropout, rng)
    mask = attention_mask(out_lengths, max_length, chunk)
    for layer in range(config.n_enc_layers):
        hidden = _conformer_block(hidden, mask, params, f"encoder.layers.{layer}", config, rng)
    used = frozenset(id(t) for name, t in params.items() if name.startswith("encoder."))
    return EncoderOutput(hidden=hidden, lengths=out_lengths, param_ids=used)


def encode(frames: np.ndarray, chunk: Optional[int], params: Parameters,
           config: ModelConfig) -> EncoderOutput:
    """Encode one T×F utterance"""
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise ValidationError("encode expects a T×F matrix")
    return encode_batch(frames[None], [frames.shape[0]], chunk, params, config)


def ctc_head(hidden: Union[Tensor, EncoderOutput], params: Parameters) -> Tensor:
    """Per-frame log-probabilities over V tokens plus blank"""
    if isinstance(hidden, EncoderOutput):
        hidden = hidden.hidden
    return log_softmax(_linear(hidden, params, "ctc"))


def decoder_forward(memory: EncoderOutput, prev_tokens, params: Parameters, config: ModelConfig,
                    rng: Optional[np.random.Generator] = None) -> Tensor:
    """Teacher-forced decoder logits; prev_tokens is sos-prefixed ([L] or [B, L], eos-padded)"""
    tokens = np.asarray(prev_tokens, dtype=np.int64)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None]
    if tokens.ndim != 2 or tokens.shape[1] < 1:
        raise ValidationError("prev_tokens must be a non-empty sequence")
    if tokens.shape[0] != memory.batch_size:
        raise ValidationError("prev_tokens batch does not match encoder output batch")
    vocab = config.vocab
    if tokens.min() < 0 or tokens.max() >= vocab.decoder_dim:
        raise ValidationError(f"token ID out of range [0, {vocab.decoder_dim})")
    if np.any(tokens[:, 0] != vocab.sos_id):
        raise ValidationError("prev_tokens must begin with sos")

    batch, length = tokens.shape
    d = config.d_model
    x = embedding(params["decoder.embed.table"], tokens) * math.sqrt(d)
    x = x + positional_encoding(length, d).astype(x.dtype)
    x = dropout(x, config.dropout, rng)

    self_mask = np.broadcast_to(causal_mask(length), (batch, length, length))
    t_memory = memory.hidden.shape[1]
    cross_mask = np.broadcast_to(padding_mask(memory.lengths, t_memory)[:, None, :], (batch, length, t_memory))
    for layer in range(config.n_dec_layers):
        prefix = f"decoder.layers.{layer}"
        normed = _norm(x, params, f"{prefix}.self_attn.norm")
        x = x + dropout(multi_head_attention(normed, normed, self_mask, params,
                                             f"{prefix}.self_attn", config.n_heads), config.dropout, rng)
        normed = _norm(x, params, f"{prefix}.cross_attn.norm")
        x = x + dropout(multi_head_attention(normed, memory.hidden, cross_mask, params,
                                             f"{prefix}.cross_attn", config.n_heads), config.dropout, rng)
        x = x + dropout(_feed_forward(x, params, f"{prefix}.ffn", relu, config.dropout, rng),
                        config.dropout, rng)
    logits = _linear(_norm(x, params, "decoder.final_norm"), params, "decoder.out")
    return logits[0] if single else logits


def decoder_inputs(token_lists: Sequence[Sequence[int]], vocab) -> Tuple[np.ndarray, List[List[int]]]:
    """sos-prefixed, eos-padded decoder inputs [B, L] and eos-terminated targets"""
    if not token_lists:
        raise ValidationError("no transcripts given")
    length = max(len(tokens) for tokens in token_lists) + 1
    prev = np.full((len(token_lists), length), vocab.eos_id, dtype=np.int64)
    targets = []
    for row, tokens in enumerate(token_lists):
        prev[row, 0] = vocab.sos_id
        prev[row, 1:len(tokens) + 1] = tokens
        targets.append(list(tokens) + [vocab.eos_id])
    return prev, targets
