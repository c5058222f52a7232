"""Encoder-decoder attention classifier over ROI time-series segments.

A subject's segment is a (segment_len, n_rois) matrix read in two ways: as a
temporal token stream (one token per time step, linearly embedded) and as a
spatial token stream (one token per ROI, embedded either linearly or by a
small 1-D CNN over that ROI's series).  Both streams receive sinusoidal
positional encodings (time positions and ROI index positions respectively).
One stream runs through the encoder, the other through the decoder; the
final decoder block cross-attends from its stream onto the encoder output.
A pooled summary, concatenated with a phenotype vector, feeds a small
classifier head that emits the probability of the positive class.

Blocks are pre-LN residual: X1 = X + Drop(Attn(LN(X))),
X2 = X1 + Drop(FFN(LN(X1))) with a GeLU between the two FFN matmuls.
Temporal self-attention can be banded by a window mask; spatial
self-attention can be filtered to each query's top-k ROIs.  Both tactics
follow their stream if the streams are swapped between encoder and decoder.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .attention import (AttentionWeights, HeadTrace, RankSpec, WindowSpec,
                        co_attention, self_attention_spatial,
                        self_attention_temporal)
from .tensor import (ShapeError, Tensor, add, avg_pool1d, concat, conv1d,
                     dropout, gelu, global_avg_pool, layer_norm, matmul,
                     reduce_mean, sigmoid)

VARIANTS = ("enc_dec_temporal_spatial", "enc_dec_spatial_temporal",
            "encoder_only_temporal", "encoder_only_spatial")
SPATIAL_EMBEDDINGS = ("cnn_enhanced", "cnn_original", "linear")


@dataclass(frozen=True)
class CnnEmbedSpec:
    """Stack shape for the per-ROI 1-D CNN embedding.

    The original stack is three rounds of conv-GeLU with average pooling
    after the first two and global average pooling at the end.  The enhanced
    stack appends one more conv-GeLU before the global pooling, so channel
    counts have length 4 instead of 3.  The last channel count is the token
    width and must equal d_model.
    """

    variant: str
    channels: tuple[int, ...]
    kernel_size: int = 5

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        expected = {"original": 3, "enhanced": 4}.get(self.variant)
        if expected is None:
            raise ValueError(f"unknown cnn variant {self.variant!r}")
        if len(self.channels) != expected:
            raise ValueError(f"{self.variant} cnn expects {expected} channel "
                             f"counts, got {self.channels}")
        if self.kernel_size < 1:
            raise ValueError("kernel size must be >= 1")
        if any(c < 1 for c in self.channels):
            raise ValueError("channel counts must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    n_rois: int = 190
    segment_len: int = 60
    d_model: int = 256
    d_a: int = 256
    d_ff: int = 1024
    heads_encoder: int = 8
    heads_decoder: int = 4
    blocks_encoder: int = 2
    blocks_decoder: int = 2
    p_drop: float = 0.1
    variant: str = "enc_dec_temporal_spatial"
    spatial_embedding: str = "cnn_enhanced"
    cnn_channels: tuple[int, ...] | None = None
    cnn_kernel: int = 5
    window: WindowSpec | None = WindowSpec(20, 20, (0,))
    rank: RankSpec | None = RankSpec(60)
    pheno_dim: int = 5
    classifier_sizes: tuple[int, ...] = (256, 10, 1)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.spatial_embedding not in SPATIAL_EMBEDDINGS:
            raise ValueError(f"unknown spatial embedding {self.spatial_embedding!r}")
        for name in ("n_rois", "segment_len", "d_model", "d_a", "d_ff"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % 2 != 0:
            raise ValueError("d_model must be even (sinusoidal positions pair "
                             "sine and cosine columns)")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        if self.classifier_sizes[-1] != 1:
            raise ValueError("classifier must end in a single output unit")
        if self.pheno_dim < 0:
            raise ValueError("pheno_dim must be >= 0")
        object.__setattr__(self, "classifier_sizes", tuple(self.classifier_sizes))
        if self.cnn_channels is not None:
            object.__setattr__(self, "cnn_channels", tuple(self.cnn_channels))
        if self.d_a % self.heads_encoder != 0:
            raise ValueError(f"d_a {self.d_a} not divisible by "
                             f"{self.heads_encoder} encoder heads")
        if self.has_decoder:
            if self.d_a % self.heads_decoder != 0:
                raise ValueError(f"d_a {self.d_a} not divisible by "
                                 f"{self.heads_decoder} decoder heads")
            if self.blocks_decoder < 1:
                raise ValueError("decoder needs at least the cross-attention block")
        if self.blocks_encoder < 1:
            raise ValueError("encoder needs at least one block")
        if self.rank is not None and self.rank.k > self.n_rois:
            raise ValueError(f"rank k={self.rank.k} exceeds n_rois={self.n_rois}")
        if self.window is not None:
            n_temporal = self.temporal_self_blocks
            bad = [l for l in self.window.layers if not 0 <= l < n_temporal]
            if bad:
                raise ValueError(f"window layers {bad} out of range for "
                                 f"{n_temporal} temporal self-attention blocks")
        if self.uses_spatial_stream:
            channels = self.resolved_cnn_channels
            if channels is not None and channels[-1] != self.d_model:
                raise ValueError(f"last cnn channel count {channels[-1]} must "
                                 f"equal d_model {self.d_model}")

    # -- derived structure -------------------------------------------------

    @property
    def has_decoder(self) -> bool:
        return self.variant.startswith("enc_dec")

    @property
    def encoder_stream(self) -> str:
        if self.variant in ("enc_dec_temporal_spatial", "encoder_only_temporal"):
            return "temporal"
        return "spatial"

    @property
    def decoder_stream(self) -> str | None:
        if not self.has_decoder:
            return None
        return "spatial" if self.encoder_stream == "temporal" else "temporal"

    @property
    def uses_spatial_stream(self) -> bool:
        return self.encoder_stream == "spatial" or self.decoder_stream == "spatial"

    @property
    def temporal_self_blocks(self) -> int:
        """Self-attention blocks available to the temporal stream."""
        if self.encoder_stream == "temporal":
            return self.blocks_encoder
        if self.decoder_stream == "temporal":
            return self.blocks_decoder - 1
        return 0

    @property
    def resolved_cnn_channels(self) -> tuple[int, ...] | None:
        if self.spatial_embedding == "linear":
            return None
        if self.cnn_channels is not None:
            return self.cnn_channels
        if self.spatial_embedding == "cnn_original":
            return (32, 64, self.d_model)
        return (32, 64, self.d_model, self.d_model)

    def cnn_spec(self) -> CnnEmbedSpec | None:
        channels = self.resolved_cnn_channels
        if channels is None:
            return None
        variant = "original" if self.spatial_embedding == "cnn_original" else "enhanced"
        return CnnEmbedSpec(variant=variant, channels=channels,
                            kernel_size=self.cnn_kernel)

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, WindowSpec):
                v = {"lookback": v.lookback, "lookahead": v.lookahead,
                     "layers": list(v.layers)}
            elif isinstance(v, RankSpec):
                v = {"k": v.k, "select_dropout": v.select_dropout}
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if kwargs.get("window") is not None and not isinstance(kwargs["window"], WindowSpec):
            w = dict(kwargs["window"])
            extra = set(w) - {"lookback", "lookahead", "layers"}
            if extra:
                raise ValueError(f"unknown window keys: {sorted(extra)}")
            kwargs["window"] = WindowSpec(lookback=w["lookback"],
                                          lookahead=w["lookahead"],
                                          layers=tuple(w.get("layers", (0,))))
        if kwargs.get("rank") is not None and not isinstance(kwargs["rank"], RankSpec):
            r = dict(kwargs["rank"])
            extra = set(r) - {"k", "select_dropout"}
            if extra:
                raise ValueError(f"unknown rank keys: {sorted(extra)}")
            kwargs["rank"] = RankSpec(k=r["k"],
                                      select_dropout=r.get("select_dropout", 0.1))
        for key in ("cnn_channels", "classifier_sizes"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


# -- initialization -----------------------------------------------------------


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) truncated to [-2 std, 2 std].

    Truncation is a hard clip rather than rejection resampling: resampling
    shrinks the realized standard deviation to 0.88 std, while clipping keeps
    it within 4% of the nominal value and still guarantees |w| <= 2 std."""
    return np.clip(rng.normal(0.0, std, size=shape), -2.0 * std, 2.0 * std)


def _he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


def _glorot_uniform(rng: np.random.Generator, shape, fan_in: int,
                    fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sinusoidal_positional_encoding(length: int, d_model: int) -> np.ndarray:
    """PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(same angle)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if d_model < 2 or d_model % 2 != 0:
        raise ValueError(f"d_model must be a positive even number, got {d_model}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


_BLOCK_PARAM_NAMES = ("ln1.gamma", "ln1.beta", "attn.w_query", "attn.w_key",
                      "attn.w_value", "attn.w_out", "ln2.gamma", "ln2.beta",
                      "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2")


def parameter_names(config: ModelConfig) -> list[str]:
    """Names of every parameter the config creates, in creation order."""
    names: list[str] = []

    def embed_names(side: str, stream: str) -> None:
        if stream == "temporal" or config.spatial_embedding == "linear":
            names.append(f"{side}.embed.w")
        else:
            for j in range(len(config.resolved_cnn_channels)):
                names.append(f"{side}.embed.conv{j}.w")

    embed_names("encoder", config.encoder_stream)
    for b in range(config.blocks_encoder):
        names.extend(f"encoder.block{b}.{n}" for n in _BLOCK_PARAM_NAMES)
    if config.has_decoder:
        embed_names("decoder", config.decoder_stream)
        for b in range(config.blocks_decoder):
            names.extend(f"decoder.block{b}.{n}" for n in _BLOCK_PARAM_NAMES)
    for i in range(len(config.classifier_sizes)):
        names.append(f"classifier.layer{i}.w")
        names.append(f"classifier.layer{i}.b")
    return names


def _init_block(params: dict, rng, prefix: str, d_model: int, d_a: int,
                d_ff: int) -> None:
    std = math.sqrt(1.0 / d_model)
    params[f"{prefix}.ln1.gamma"] = Tensor(np.ones(d_model), requires_grad=True)
    params[f"{prefix}.ln1.beta"] = Tensor(np.zeros(d_model), requires_grad=True)
    for name in ("w_query", "w_key", "w_value"):
        params[f"{prefix}.attn.{name}"] = Tensor(
            truncated_normal(rng, (d_model, d_a), std), requires_grad=True)
    params[f"{prefix}.attn.w_out"] = Tensor(
        truncated_normal(rng, (d_a, d_model), std), requires_grad=True)
    params[f"{prefix}.ln2.gamma"] = Tensor(np.ones(d_model), requires_grad=True)
    params[f"{prefix}.ln2.beta"] = Tensor(np.zeros(d_model), requires_grad=True)
    params[f"{prefix}.ffn.w1"] = Tensor(
        truncated_normal(rng, (d_model, d_ff), std), requires_grad=True)
    params[f"{prefix}.ffn.b1"] = Tensor(np.zeros(d_ff), requires_grad=True)
    params[f"{prefix}.ffn.w2"] = Tensor(
        truncated_normal(rng, (d_ff, d_model), std), requires_grad=True)
    params[f"{prefix}.ffn.b2"] = Tensor(np.zeros(d_model), requires_grad=True)


def _init_embed(params: dict, rng, prefix: str, stream: str,
                config: ModelConfig) -> None:
    std = math.sqrt(1.0 / config.d_model)
    if stream == "temporal":
        params[f"{prefix}.w"] = Tensor(
            truncated_normal(rng, (config.n_rois, config.d_model), std),
            requires_grad=True)
        return
    if config.spatial_embedding == "linear":
        params[f"{prefix}.w"] = Tensor(
            truncated_normal(rng, (config.segment_len, config.d_model), std),
            requires_grad=True)
        return
    spec = config.cnn_spec()
    c_in = 1
    for j, c_out in enumerate(spec.channels):
        fan_in = c_in * spec.kernel_size
        params[f"{prefix}.conv{j}.w"] = Tensor(
            _he_normal(rng, (c_out, c_in, spec.kernel_size), fan_in),
            requires_grad=True)
        c_in = c_out


def init_parameters(config: ModelConfig,
                    rng: np.random.Generator | int) -> dict[str, Tensor]:
    """Fresh parameter dict; creation order is fixed so a seeded generator
    reproduces values bit for bit.

    Transformer (embedding, attention, FFN) matrices draw from a truncated
    normal with std sqrt(1/d_model); conv kernels are He-normal; classifier
    layers are He-normal except the final one, which is Glorot-uniform; all
    biases start at zero and layer norms at identity.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    params: dict[str, Tensor] = {}
    _init_embed(params, rng, "encoder.embed", config.encoder_stream, config)
    for b in range(config.blocks_encoder):
        _init_block(params, rng, f"encoder.block{b}", config.d_model,
                    config.d_a, config.d_ff)
    if config.has_decoder:
        _init_embed(params, rng, "decoder.embed", config.decoder_stream, config)
        for b in range(config.blocks_decoder):
            _init_block(params, rng, f"decoder.block{b}", config.d_model,
                        config.d_a, config.d_ff)
    n_in = config.d_model + config.pheno_dim
    sizes = config.classifier_sizes
    for i, n_out in enumerate(sizes):
        shape = (n_in, n_out)
        if i < len(sizes) - 1:
            w = _he_normal(rng, shape, n_in)
        else:
            w = _glorot_uniform(rng, shape, n_in, n_out)
        params[f"classifier.layer{i}.w"] = Tensor(w, requires_grad=True)
        params[f"classifier.layer{i}.b"] = Tensor(np.zeros(n_out), requires_grad=True)
        n_in = n_out
    return params


# -- forward pieces ------------------------------------------------------------


def temporal_embed(segment: np.ndarray, w: Tensor) -> Tensor:
    """One token per time step: (t, s) rows linearly mapped to d_model."""
    if segment.shape[1] != w.shape[0]:
        raise ShapeError(f"segment has {segment.shape[1]} ROIs but the "
                         f"temporal embedding expects {w.shape[0]}")
    return matmul(Tensor(segment.copy()), w)


def spatial_embed_linear(segment: np.ndarray, w: Tensor) -> Tensor:
    """One token per ROI: each length-t column linearly mapped to d_model."""
    if segment.shape[0] != w.shape[0]:
        raise ShapeError(f"segment has {segment.shape[0]} time points but the "
                         f"spatial embedding expects {w.shape[0]}")
    return matmul(Tensor(segment.T.copy()), w)


def spatial_embed_cnn(segment: np.ndarray, params: Mapping[str, Tensor],
                      prefix: str, spec: CnnEmbedSpec) -> Tensor:
    """Embed each ROI series through the conv stack: (n_rois, d_model) tokens.

    Each ROI's length-t column runs as a 1-channel sequence through
    conv-GeLU rounds (shared parameters across ROIs); average pooling of
    window 2 follows the first two convs and global average pooling over the
    remaining time axis produces the channel vector."""
    h: Tensor = Tensor(segment.T.copy()[:, None, :])  # (n_rois, 1, t)
    for j in range(len(spec.channels)):
        if h.shape[-1] < spec.kernel_size:
            raise ShapeError(f"time axis shrank to {h.shape[-1]} entering conv "
                             f"{j}, below kernel size {spec.kernel_size}; "
                             f"segment too short for the pooling chain")
        h = gelu(conv1d(h, params[f"{prefix}.conv{j}.w"], stride=1, padding="same"))
        if j < 2:
            h = avg_pool1d(h, 2, 2)
    return global_avg_pool(h, axis=-1)


def _embed_stream(segment: np.ndarray, params: Mapping[str, Tensor],
                  side: str, stream: str, config: ModelConfig) -> Tensor:
    if stream == "temporal":
        tokens = temporal_embed(segment, params[f"{side}.embed.w"])
    elif config.spatial_embedding == "linear":
        tokens = spatial_embed_linear(segment, params[f"{side}.embed.w"])
    else:
        tokens = spatial_embed_cnn(segment, params, f"{side}.embed",
                                   config.cnn_spec())
    pe = sinusoidal_positional_encoding(tokens.shape[0], tokens.shape[1])
    return add(tokens, Tensor(pe))


def transformer_block(x: Tensor, params: Mapping[str, Tensor], prefix: str,
                      attn_fn, p_drop: float, mode: str,
                      rng: np.random.Generator | None
                      ) -> tuple[Tensor, list[HeadTrace]]:
    """Pre-LN residual block; ``attn_fn`` maps the normalized stream to
    (attention output, traces)."""
    normed = layer_norm(x, params[f"{prefix}.ln1.gamma"], params[f"{prefix}.ln1.beta"])
    attn_out, traces = attn_fn(normed)
    x1 = add(x, dropout(attn_out, p_drop, mode, rng))
    normed1 = layer_norm(x1, params[f"{prefix}.ln2.gamma"], params[f"{prefix}.ln2.beta"])
    hidden = gelu(add(matmul(normed1, params[f"{prefix}.ffn.w1"]),
                      params[f"{prefix}.ffn.b1"]))
    ff = add(matmul(hidden, params[f"{prefix}.ffn.w2"]), params[f"{prefix}.ffn.b2"])
    x2 = add(x1, dropout(ff, p_drop, mode, rng))
    return x2, traces


@dataclass
class ForwardResult:
    prob: Tensor              # (1, 1) probability of the positive class
    logit: Tensor             # (1, 1) pre-sigmoid score
    traces: list[HeadTrace]   # per-head attention records, forward order
    encoder_out: np.ndarray   # detached encoder stack output
    decoder_out: np.ndarray | None  # detached decoder stack output


def attention_weights(params: Mapping[str, Tensor], prefix: str,
                      heads: int) -> AttentionWeights:
    return AttentionWeights(w_query=params[f"{prefix}.attn.w_query"],
                            w_key=params[f"{prefix}.attn.w_key"],
                            w_value=params[f"{prefix}.attn.w_value"],
                            w_out=params[f"{prefix}.attn.w_out"],
                            heads=heads)


def model_forward(params: Mapping[str, Tensor], config: ModelConfig,
                  segment: np.ndarray, pheno: np.ndarray | None = None,
                  mode: str = "eval", rng: np.random.Generator | None = None,
                  ) -> ForwardResult:
    """Run one subject's segment through the configured network.

    ``segment`` is (segment_len, n_rois) with time as rows; ``pheno`` is a
    (pheno_dim,) vector (required unless pheno_dim is zero).  ``mode`` is
    'train' or 'eval'; train mode needs ``rng`` for dropout and
    rank-selection noise.
    """
    segment = np.asarray(segment, dtype=np.float64)
    if segment.shape != (config.segment_len, config.n_rois):
        raise ShapeError(f"segment shape {segment.shape} does not match "
                         f"(segment_len={config.segment_len}, "
                         f"n_rois={config.n_rois})")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if config.pheno_dim:
        pheno = np.asarray(pheno, dtype=np.float64)
        if pheno.shape != (config.pheno_dim,):
            raise ShapeError(f"phenotype shape {pheno.shape} does not match "
                             f"({config.pheno_dim},)")
    traces: list[HeadTrace] = []
    temporal_self_seen = 0

    def window_for_next_temporal_block() -> WindowSpec | None:
        nonlocal temporal_self_seen
        spec = None
        if config.window is not None and temporal_self_seen in config.window.layers:
            spec = config.window
        temporal_self_seen += 1
        return spec

    # Encoder pass.
    x = _embed_stream(segment, params, "encoder", config.encoder_stream, config)
    for b in range(config.blocks_encoder):
        prefix = f"encoder.block{b}"
        w = attention_weights(params, prefix, config.heads_encoder)
        if config.encoder_stream == "temporal":
            spec = window_for_next_temporal_block()
            attn = lambda normed, s=spec, w=w, l=b: \
                self_attention_temporal(normed, w, window=s, layer=l)
        else:
            attn = lambda normed, w=w, l=b: \
                self_attention_spatial(normed, w, rank=config.rank, mode=mode,
                                       rng=rng, layer=l)
        x, block_traces = transformer_block(x, params, prefix, attn,
                                            config.p_drop, mode, rng)
        traces.extend(block_traces)
    enc_out = x

    # Decoder pass: self-attention blocks, then one cross-attention block.
    dec_out = None
    if config.has_decoder:
        y = _embed_stream(segment, params, "decoder", config.decoder_stream, config)
        for b in range(config.blocks_decoder):
            prefix = f"decoder.block{b}"
            w = attention_weights(params, prefix, config.heads_decoder)
            layer = config.blocks_encoder + b
            if b == config.blocks_decoder - 1:
                attn = lambda normed, w=w, l=layer: \
                    co_attention(enc_out, normed, w, layer=l)
            elif config.decoder_stream == "spatial":
                attn = lambda normed, w=w, l=layer: \
                    self_attention_spatial(normed, w, rank=config.rank,
                                           mode=mode, rng=rng, layer=l)
            else:
                spec = window_for_next_temporal_block()
                attn = lambda normed, s=spec, w=w, l=layer: \
                    self_attention_temporal(normed, w, window=s, layer=l)
            y, block_traces = transformer_block(y, params, prefix, attn,
                                                config.p_drop, mode, rng)
            traces.extend(block_traces)
        dec_out = y

    final = dec_out if dec_out is not None else enc_out
    pooled = reduce_mean(final, axis=0, keepdims=True)  # (1, d_model)
    h = pooled
    if config.pheno_dim:
        h = concat([pooled, Tensor(pheno[None, :])], axis=1)
    n_layers = len(config.classifier_sizes)
    for i in range(n_layers):
        h = add(matmul(h, params[f"classifier.layer{i}.w"]),
                params[f"classifier.layer{i}.b"])
        if i < n_layers - 1:
            h = gelu(h)
    logit = h
    prob = sigmoid(logit)
    return ForwardResult(prob=prob, logit=logit, traces=traces,
                         encoder_out=enc_out.detach(),
                         decoder_out=dec_out.detach() if dec_out is not None else None)


# -- checkpoints ---------------------------------------------------------------

_PARAM_PREFIX = "param/"
_META_KEY = "__meta__"


def save_checkpoint(path, params: Mapping[str, Tensor], config: ModelConfig,
                    extra: dict | None = None) -> None:
    """Single-file archive of all parameter arrays plus a JSON header
    (model config and caller-provided metadata)."""
    meta = json.dumps({"config": config.to_dict(), "extra": extra or {}},
                      sort_keys=True)
    arrays = {_META_KEY: np.frombuffer(meta.encode("utf-8"), dtype=np.uint8).copy()}
    for name, t in params.items():
        arrays[_PARAM_PREFIX + name] = t.data
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, Tensor], ModelConfig, dict]:
    with np.load(path) as archive:
        meta = json.loads(bytes(archive[_META_KEY].tobytes()).decode("utf-8"))
        params = {name[len(_PARAM_PREFIX):]: Tensor(archive[name], requires_grad=True)
                  for name in archive.files if name.startswith(_PARAM_PREFIX)}
    config = ModelConfig.from_dict(meta["config"])
    if sorted(params) != sorted(parameter_names(config)):
        raise ValueError("checkpoint parameter names do not match its config")
    return params, config, meta.get("extra", {})
