"""Scaled dot-product attention with additive score masking.

Masks are plain {0, -inf} arrays added to scores before the softmax, so
Tensors themselves never carry non-finite values.  Two mask families are
provided: a banded window over temporal positions (each query sees a bounded
past/future neighbourhood) and a per-row rank filter that keeps only the
top-k keys of each query (with dropout noise injected into the selection
during training so the kept set varies between steps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import (DegenerateMaskError, ShapeError, Tensor, concat, matmul,
                     mul, narrow, softmax_rows, transpose)

__all__ = [
    "AdditiveMask", "AttentionWeights", "ScoreMatrix", "WindowSpec",
    "RankSpec", "HeadTrace", "build_window_mask", "roi_rank_mask",
    "scaled_dot_attention", "multi_head_attention", "self_attention_temporal",
    "self_attention_spatial", "co_attention", "export_scores",
]


@dataclass(frozen=True)
class AttentionWeights:
    """Projection bundle for one attention layer.

    ``w_query``/``w_key``/``w_value`` map d_model to the joint attention
    width d_a; ``w_out`` maps d_a back to d_model.  Head h uses columns
    [h*d_h, (h+1)*d_h) of each projection, d_h = d_a // heads.
    """

    w_query: Tensor
    w_key: Tensor
    w_value: Tensor
    w_out: Tensor
    heads: int

    def __post_init__(self):
        shapes = {self.w_query.shape, self.w_key.shape, self.w_value.shape}
        if len(shapes) != 1:
            raise ShapeError(f"query/key/value projections disagree: {shapes}")
        d_model, d_a = self.w_query.shape
        if self.w_out.shape != (d_a, d_model):
            raise ShapeError(f"output projection {self.w_out.shape} does not "
                             f"invert ({d_model}, {d_a})")
        if self.heads < 1 or d_a % self.heads != 0:
            raise ShapeError(f"attention width {d_a} not divisible into "
                             f"{self.heads} heads")

    @property
    def d_a(self) -> int:
        return self.w_query.shape[1]

    @property
    def d_h(self) -> int:
        return self.d_a // self.heads


@dataclass(frozen=True)
class AdditiveMask:
    """A {0, -inf} matrix added to attention scores before softmax."""

    values: np.ndarray
    tag: str = "none"  # which rule built the mask: none | window | rank

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {v.shape}")
        legal = (v == 0.0) | (v == -np.inf)
        if not np.all(legal):
            raise ValueError("mask entries must be 0 or -inf")
        dead = np.nonzero(~(v == 0.0).any(axis=1))[0]
        if dead.size:
            raise DegenerateMaskError(f"mask rows with no open position: "
                                      f"{dead.tolist()}")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def kept_per_row(self) -> np.ndarray:
        return (self.values == 0.0).sum(axis=1)


@dataclass(frozen=True)
class ScoreMatrix:
    """Detached pre-softmax scores for one head (query rows, key columns)."""

    values: np.ndarray
    scale_applied: bool = True


@dataclass
class HeadTrace:
    """Per-head attention record captured during a forward pass:
    pre-softmax scores and post-softmax weights."""

    kind: str
    layer: int
    head: int
    scores: ScoreMatrix
    weights: np.ndarray


@dataclass(frozen=True)
class WindowSpec:
    """Banded temporal attention: query i sees keys in
    [i - lookback, i + lookahead], clipped to the sequence."""

    lookback: int
    lookahead: int
    layers: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.lookback < 0 or self.lookahead < 0:
            raise ValueError("window extents must be non-negative")
        object.__setattr__(self, "layers", tuple(self.layers))

    @classmethod
    def symmetric(cls, l: int, layers=(0,)) -> "WindowSpec":
        return cls(lookback=l, lookahead=l, layers=layers)

    @classmethod
    def trailing(cls, l: int, layers=(0,)) -> "WindowSpec":
        """Window reaching l steps back but only 1 step forward."""
        return cls(lookback=l, lookahead=1, layers=layers)


@dataclass(frozen=True)
class RankSpec:
    """Keep only the top-k keys per query row in spatial self-attention."""

    k: int
    select_dropout: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("rank k must be >= 1")
        if not 0.0 <= self.select_dropout < 1.0:
            raise ValueError("selection dropout must be in [0, 1)")


def build_window_mask(t: int, lookback: int, lookahead: int) -> AdditiveMask:
    """Mask where query i keeps key j iff
    max(0, i - lookback) <= j <= min(t - 1, i + lookahead)."""
    if t < 1:
        raise ValueError("sequence length must be >= 1")
    if lookback < 0 or lookahead < 0:
        raise ValueError("window extents must be non-negative")
    idx = np.arange(t)
    offset = idx[None, :] - idx[:, None]  # j - i
    inside = (offset >= -lookback) & (offset <= lookahead)
    return AdditiveMask(np.where(inside, 0.0, -np.inf), tag="window")


def roi_rank_mask(scores, k: int, p_drop: float = 0.1, mode: str = "eval",
                  rng: np.random.Generator | None = None) -> AdditiveMask:
    """Per-row top-k key selection as an additive mask.

    Selection runs on a detached copy of the scores so it never feeds the
    gradient.  In train mode the copy first passes through inverted dropout
    at rate ``p_drop`` (zeroed entries then compete at value 0), which
    randomizes marginal rankings between steps; eval mode selects
    deterministically.  Ties keep the lowest key index.
    """
    if isinstance(scores, ScoreMatrix):
        scores = scores.values
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ShapeError(f"rank mask expects 2-D scores, got {scores.shape}")
    if not 0.0 <= p_drop < 1.0:
        raise ValueError("selection dropout must be in [0, 1)")
    n_keys = scores.shape[1]
    if not 1 <= k <= n_keys:
        raise ValueError(f"rank k={k} out of range for {n_keys} keys")
    sel = scores.copy()
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode rank selection requires an rng stream")
        if p_drop > 0.0:
            keep = rng.random(sel.shape) >= p_drop
            sel = sel * keep / (1.0 - p_drop)
    elif mode != "eval":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    top = np.argsort(-sel, axis=1, kind="stable")[:, :k]
    values = np.full(scores.shape, -np.inf)
    np.put_along_axis(values, top, 0.0, axis=1)
    return AdditiveMask(values, tag="rank")


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         mask: AdditiveMask | None = None
                         ) -> tuple[Tensor, ScoreMatrix, np.ndarray]:
    """softmax(q k^T / sqrt(d)) v for one head.

    Returns the output plus the detached pre-softmax scores and post-softmax
    weights for inspection and export.
    """
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query/key widths differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key/value row counts differ: {k.shape} vs {v.shape}")
    if mask is not None and mask.shape != (q.shape[0], k.shape[0]):
        raise ShapeError(f"mask shape {mask.shape} does not match "
                         f"({q.shape[0]}, {k.shape[0]}) scores")
    scale = 1.0 / math.sqrt(q.shape[1])
    scores = mul(matmul(q, transpose(k)), scale)
    weights = softmax_rows(scores, mask.values if mask is not None else None)
    out = matmul(weights, v)
    return out, ScoreMatrix(scores.detach()), weights.detach()


MaskStrategy = WindowSpec | RankSpec | None


def multi_head_attention(x_q_src: Tensor, x_kv_src: Tensor,
                         w: AttentionWeights, strategy: MaskStrategy = None,
                         mode: str = "eval",
                         rng: np.random.Generator | None = None,
                         kind: str = "self", layer: int = 0,
                         ) -> tuple[Tensor, list[HeadTrace]]:
    """Multi-head attention via column slices of joint projections.

    ``strategy`` selects the additive mask: a WindowSpec bands the scores
    identically on every head (self-attention only), a RankSpec keeps each
    query's top-k keys independently per head, None leaves scores dense.
    """
    if isinstance(strategy, WindowSpec) and x_q_src.shape[0] != x_kv_src.shape[0]:
        raise ShapeError("window masking requires self-attention "
                         f"(got {x_q_src.shape[0]} queries, "
                         f"{x_kv_src.shape[0]} keys)")
    q_full = matmul(x_q_src, w.w_query)
    k_full = matmul(x_kv_src, w.w_key)
    v_full = matmul(x_kv_src, w.w_value)
    window_mask = None
    if isinstance(strategy, WindowSpec):
        window_mask = build_window_mask(x_q_src.shape[0], strategy.lookback,
                                        strategy.lookahead)
    d_h = w.d_h
    outs: list[Tensor] = []
    traces: list[HeadTrace] = []
    for h in range(w.heads):
        q_h = narrow(q_full, 1, h * d_h, d_h)
        k_h = narrow(k_full, 1, h * d_h, d_h)
        v_h = narrow(v_full, 1, h * d_h, d_h)
        scale = 1.0 / math.sqrt(d_h)
        scores = mul(matmul(q_h, transpose(k_h)), scale)
        if isinstance(strategy, RankSpec):
            mask = roi_rank_mask(scores.detach(), strategy.k,
                                 p_drop=strategy.select_dropout, mode=mode,
                                 rng=rng)
        else:
            mask = window_mask
        weights = softmax_rows(scores, mask.values if mask is not None else None)
        outs.append(matmul(weights, v_h))
        traces.append(HeadTrace(kind=kind, layer=layer, head=h,
                                scores=ScoreMatrix(scores.detach()),
                                weights=weights.detach()))
    merged = outs[0] if w.heads == 1 else concat(outs, axis=1)
    return matmul(merged, w.w_out), traces


def self_attention_temporal(x: Tensor, w: AttentionWeights,
                            window: WindowSpec | None = None,
                            layer: int = 0) -> tuple[Tensor, list[HeadTrace]]:
    """Self-attention over time steps, optionally banded by a window mask."""
    return multi_head_attention(x, x, w, strategy=window,
                                kind="self_temporal", layer=layer)


def self_attention_spatial(x: Tensor, w: AttentionWeights,
                           rank: RankSpec | None = None, mode: str = "eval",
                           rng: np.random.Generator | None = None,
                           layer: int = 0) -> tuple[Tensor, list[HeadTrace]]:
    """Self-attention over ROI tokens, optionally rank-filtered per head."""
    return multi_head_attention(x, x, w, strategy=rank, mode=mode, rng=rng,
                                kind="self_spatial", layer=layer)


def co_attention(main: Tensor, sub: Tensor, w: AttentionWeights,
                 layer: int = 0) -> tuple[Tensor, list[HeadTrace]]:
    """Cross-attention: keys/values from ``main``, queries from ``sub``;
    output has ``sub``'s length."""
    return multi_head_attention(sub, main, w, kind="co_attention", layer=layer)


def export_scores(traces: Sequence[HeadTrace], out_dir) -> list[Path]:
    """Write one ``<layer>_<head>.tsv`` of post-softmax weights per trace.

    Values use 17 significant digits so float64 round-trips.  Returns the
    written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    seen: set[tuple[int, int]] = set()
    for tr in traces:
        key = (tr.layer, tr.head)
        if key in seen:
            raise ValueError(f"duplicate trace for layer {tr.layer} head {tr.head}")
        seen.add(key)
        sums = tr.weights.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ValueError(f"layer {tr.layer} head {tr.head}: attention rows "
                             f"do not sum to one")
        path = out_dir / f"{tr.layer}_{tr.head}.tsv"
        with open(path, "w") as fh:
            for row in tr.weights:
                fh.write("\t".join("%.17g" % x for x in row) + "\n")
        written.append(path)
    return written
