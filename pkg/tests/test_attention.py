"""Attention masks, single- and multi-head attention, and trace export."""

import math

import numpy as np
import pytest

from roiformer.attention import (
    AdditiveMask,
    AttentionWeights,
    HeadTrace,
    RankSpec,
    ScoreMatrix,
    WindowSpec,
    build_window_mask,
    co_attention,
    export_scores,
    multi_head_attention,
    roi_rank_mask,
    scaled_dot_attention,
    self_attention_spatial,
    self_attention_temporal,
)
from roiformer.gradcheck import gradient_check
from roiformer.tensor import (
    DegenerateMaskError,
    ShapeError,
    Tensor,
    reduce_sum,
)

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-10


def _softmax_rows_np(s):
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _attention_oracle(x_q, x_kv, wq, wk, wv, wo, heads, mask_values=None):
    # reference implementation: explicit per-head column slices
    q, k, v = x_q @ wq, x_kv @ wk, x_kv @ wv
    d_h = wq.shape[1] // heads
    outs = []
    for h in range(heads):
        cols = slice(h * d_h, (h + 1) * d_h)
        s = q[:, cols] @ k[:, cols].T / math.sqrt(d_h)
        if mask_values is not None:
            s = s + mask_values
        outs.append(_softmax_rows_np(s) @ v[:, cols])
    return np.concatenate(outs, axis=1) @ wo


def _make_weights(rng, d_model, d_a, heads, scale=0.5, grad=False):
    proj = lambda rows, cols: Tensor(rng.standard_normal((rows, cols)) * scale,
                                     requires_grad=grad)
    return AttentionWeights(
        w_query=proj(d_model, d_a),
        w_key=proj(d_model, d_a),
        w_value=proj(d_model, d_a),
        w_out=proj(d_a, d_model),
        heads=heads,
    )


# ---------------------------------------------------------------- window mask


def test_window_mask_t4_l1_rows():
    mask = build_window_mask(4, 1, 1)
    kept = [sorted(np.nonzero(row == 0.0)[0].tolist()) for row in mask.values]
    assert kept == [[0, 1], [0, 1, 2], [1, 2, 3], [2, 3]]
    assert mask.tag == "window"


def test_window_mask_asymmetric_row():
    mask = build_window_mask(5, 2, 1)
    row3 = np.nonzero(mask.values[3] == 0.0)[0].tolist()
    assert row3 == [1, 2, 3, 4]


@pytest.mark.parametrize("t,l", [(4, 3), (4, 10), (1, 0), (6, 5)])
def test_window_mask_wide_enough_is_dense(t, l):
    mask = build_window_mask(t, l, l)
    assert np.all(mask.values == 0.0)


def test_window_mask_kept_counts_match_formula():
    t, back, fwd = 9, 3, 2
    mask = build_window_mask(t, back, fwd)
    for i, n in enumerate(mask.kept_per_row()):
        assert n == min(t - 1, i + fwd) - max(0, i - back) + 1


def test_window_mask_rejects_bad_arguments():
    with pytest.raises(ValueError):
        build_window_mask(0, 1, 1)
    with pytest.raises(ValueError):
        build_window_mask(4, -1, 1)


def test_window_spec_constructors():
    assert WindowSpec.symmetric(3) == WindowSpec(3, 3, (0,))
    assert WindowSpec.trailing(5) == WindowSpec(5, 1, (0,))
    with pytest.raises(ValueError):
        WindowSpec(-1, 0)


# ------------------------------------------------------------------ rank mask


def test_rank_mask_keeps_top_k_per_row():
    mask = roi_rank_mask(np.array([[2.0, -1.0, 0.5]]), k=2)
    assert np.nonzero(mask.values[0] == 0.0)[0].tolist() == [0, 2]
    assert mask.tag == "rank"


def test_rank_mask_k_equal_keys_is_dense():
    scores = np.random.default_rng(0).standard_normal((4, 5))
    mask = roi_rank_mask(scores, k=5)
    assert np.all(mask.values == 0.0)


def test_rank_mask_k1_is_argmax():
    scores = np.random.default_rng(1).standard_normal((6, 7))
    mask = roi_rank_mask(scores, k=1)
    for row, srow in zip(mask.values, scores):
        assert np.nonzero(row == 0.0)[0].tolist() == [int(np.argmax(srow))]


def test_rank_mask_ties_keep_lowest_index():
    mask = roi_rank_mask(np.array([[1.0, 1.0, 0.0]]), k=1)
    assert np.nonzero(mask.values[0] == 0.0)[0].tolist() == [0]


def test_rank_mask_rows_are_independent():
    scores = np.array([[3.0, 2.0, 1.0], [1.0, 2.0, 3.0]])
    mask = roi_rank_mask(scores, k=1)
    assert np.nonzero(mask.values[0] == 0.0)[0].tolist() == [0]
    assert np.nonzero(mask.values[1] == 0.0)[0].tolist() == [2]


def test_rank_mask_always_keeps_exactly_k():
    rng = np.random.default_rng(2)
    scores = rng.standard_normal((10, 8))
    for mode, gen in (("eval", None), ("train", np.random.default_rng(3))):
        mask = roi_rank_mask(scores, k=3, p_drop=0.5, mode=mode, rng=gen)
        assert np.all(mask.kept_per_row() == 3)


def test_rank_mask_train_dropout_changes_selection():
    rng = np.random.default_rng(4)
    scores = rng.standard_normal((8, 12))
    base = roi_rank_mask(scores, k=4).values
    gen = np.random.default_rng(5)
    flips = [
        not np.array_equal(
            roi_rank_mask(scores, k=4, p_drop=0.5, mode="train", rng=gen).values,
            base,
        )
        for _ in range(20)
    ]
    assert any(flips)


def test_rank_mask_train_zero_dropout_matches_eval():
    scores = np.random.default_rng(6).standard_normal((5, 9))
    train = roi_rank_mask(scores, k=2, p_drop=0.0, mode="train",
                          rng=np.random.default_rng(0))
    np.testing.assert_array_equal(train.values,
                                  roi_rank_mask(scores, k=2).values)


def test_rank_mask_accepts_score_matrix():
    scores = np.array([[1.0, 0.0]])
    via_wrapper = roi_rank_mask(ScoreMatrix(scores), k=1)
    np.testing.assert_array_equal(via_wrapper.values,
                                  roi_rank_mask(scores, k=1).values)


def test_rank_mask_argument_validation():
    scores = np.zeros((2, 3))
    with pytest.raises(ValueError):
        roi_rank_mask(scores, k=0)
    with pytest.raises(ValueError):
        roi_rank_mask(scores, k=4)
    with pytest.raises(ValueError):
        roi_rank_mask(scores, k=1, p_drop=1.0)
    with pytest.raises(ShapeError):
        roi_rank_mask(np.zeros(3), k=1)
    with pytest.raises(ValueError):
        roi_rank_mask(scores, k=1, mode="predict")
    with pytest.raises(ValueError, match="rng"):
        roi_rank_mask(scores, k=1, mode="train")


def test_rank_spec_validation():
    with pytest.raises(ValueError):
        RankSpec(k=0)
    with pytest.raises(ValueError):
        RankSpec(k=3, select_dropout=1.0)


# ------------------------------------------------------------ mask invariants


def test_additive_mask_rejects_other_values():
    with pytest.raises(ValueError, match="0 or -inf"):
        AdditiveMask(np.array([[0.0, 1.0]]))
    with pytest.raises(ValueError):
        AdditiveMask(np.array([[0.0, np.nan]]))


def test_additive_mask_rejects_dead_rows():
    vals = np.array([[0.0, -np.inf], [-np.inf, -np.inf]])
    with pytest.raises(DegenerateMaskError, match=r"\[1\]"):
        AdditiveMask(vals)


def test_additive_mask_rejects_non_2d():
    with pytest.raises(ShapeError):
        AdditiveMask(np.zeros(3))


# --------------------------------------------------------- projection bundles


def test_attention_weights_validation(rng):
    good = _make_weights(rng, 6, 4, 2)
    assert good.d_a == 4 and good.d_h == 2
    with pytest.raises(ShapeError):
        AttentionWeights(Tensor(np.zeros((6, 4))), Tensor(np.zeros((6, 2))),
                         Tensor(np.zeros((6, 4))), Tensor(np.zeros((4, 6))), 2)
    with pytest.raises(ShapeError):
        AttentionWeights(Tensor(np.zeros((6, 4))), Tensor(np.zeros((6, 4))),
                         Tensor(np.zeros((6, 4))), Tensor(np.zeros((6, 4))), 2)
    with pytest.raises(ShapeError):
        _make_weights(rng, 6, 4, 3)


# ------------------------------------------------------- single-head attention


def test_single_key_attention_returns_value_row(rng):
    q = Tensor(rng.standard_normal((1, 3)))
    k = Tensor(rng.standard_normal((1, 3)))
    v = Tensor(rng.standard_normal((1, 4)))
    out, scores, weights = scaled_dot_attention(q, k, v)
    np.testing.assert_allclose(out.data, v.data, atol=1e-15)
    np.testing.assert_array_equal(weights, [[1.0]])
    assert scores.scale_applied


def test_saturated_softmax_selects_one_value():
    q = Tensor([[100.0, 0.0]])
    k = Tensor([[1.0, 0.0], [0.0, 1.0]])
    v = Tensor([[5.0, -2.0], [7.0, 3.0]])
    out, _, weights = scaled_dot_attention(q, k, v)
    np.testing.assert_allclose(out.data, [[5.0, -2.0]], atol=1e-12)
    assert weights[0, 0] > 1.0 - 1e-12


def test_scaled_dot_matches_loop_oracle(rng):
    q = Tensor(rng.standard_normal((4, 5)))
    k = Tensor(rng.standard_normal((6, 5)))
    v = Tensor(rng.standard_normal((6, 3)))
    mask = AdditiveMask(np.where(rng.random((4, 6)) < 0.7, 0.0, -np.inf))
    out, scores, weights = scaled_dot_attention(q, k, v, mask)
    s = q.data @ k.data.T / math.sqrt(5)
    np.testing.assert_allclose(scores.values, s, atol=ORACLE_TOL)
    p = _softmax_rows_np(s + mask.values)
    np.testing.assert_allclose(weights, p, atol=ORACLE_TOL)
    np.testing.assert_allclose(out.data, p @ v.data, atol=ORACLE_TOL)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)


def test_scaled_dot_shape_errors(rng):
    q = Tensor(rng.standard_normal((2, 3)))
    k = Tensor(rng.standard_normal((4, 3)))
    v = Tensor(rng.standard_normal((4, 2)))
    with pytest.raises(ShapeError):
        scaled_dot_attention(q, Tensor(rng.standard_normal((4, 5))), v)
    with pytest.raises(ShapeError):
        scaled_dot_attention(q, k, Tensor(rng.standard_normal((3, 2))))
    with pytest.raises(ShapeError):
        scaled_dot_attention(q, k, v, AdditiveMask(np.zeros((2, 3))))


# -------------------------------------------------------- multi-head attention


def test_single_head_equals_direct_composition(rng):
    x = Tensor(rng.standard_normal((5, 6)))
    w = _make_weights(rng, 6, 8, 1)
    out, traces = multi_head_attention(x, x, w)
    expected = _attention_oracle(x.data, x.data, w.w_query.data, w.w_key.data,
                                 w.w_value.data, w.w_out.data, heads=1)
    np.testing.assert_allclose(out.data, expected, atol=ORACLE_TOL)
    assert len(traces) == 1


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_multi_head_matches_slicing_oracle(rng, heads):
    x_q = Tensor(rng.standard_normal((5, 6)))
    x_kv = Tensor(rng.standard_normal((7, 6)))
    w = _make_weights(rng, 6, 8, heads)
    out, traces = multi_head_attention(x_q, x_kv, w)
    expected = _attention_oracle(x_q.data, x_kv.data, w.w_query.data,
                                 w.w_key.data, w.w_value.data, w.w_out.data,
                                 heads)
    assert out.shape == (5, 6)
    np.testing.assert_allclose(out.data, expected, atol=ORACLE_TOL)
    assert [t.head for t in traces] == list(range(heads))
    for t in traces:
        assert t.weights.shape == (5, 7)
        np.testing.assert_allclose(t.weights.sum(axis=1), 1.0, atol=1e-12)


def test_multi_head_window_strategy_matches_masked_oracle(rng):
    x = Tensor(rng.standard_normal((6, 4)))
    w = _make_weights(rng, 4, 8, 2)
    spec = WindowSpec.symmetric(2)
    out, _ = multi_head_attention(x, x, w, strategy=spec)
    mask = build_window_mask(6, 2, 2)
    expected = _attention_oracle(x.data, x.data, w.w_query.data, w.w_key.data,
                                 w.w_value.data, w.w_out.data, 2, mask.values)
    np.testing.assert_allclose(out.data, expected, atol=ORACLE_TOL)


def test_multi_head_rank_strategy_masks_per_head(rng):
    x = Tensor(rng.standard_normal((5, 4)))
    w = _make_weights(rng, 4, 8, 2)
    out, traces = multi_head_attention(x, x, w, strategy=RankSpec(k=2))
    for t in traces:
        # exactly k strictly positive weights per row after the rank filter
        assert np.all((t.weights > 0.0).sum(axis=1) == 2)
    assert np.all(np.isfinite(out.data))


def test_window_strategy_requires_self_attention(rng):
    x_q = Tensor(rng.standard_normal((3, 4)))
    x_kv = Tensor(rng.standard_normal((5, 4)))
    w = _make_weights(rng, 4, 4, 1)
    with pytest.raises(ShapeError, match="self-attention"):
        multi_head_attention(x_q, x_kv, w, strategy=WindowSpec.symmetric(1))


def test_trace_metadata_fields(rng):
    x = Tensor(rng.standard_normal((3, 4)))
    w = _make_weights(rng, 4, 4, 2)
    _, traces = multi_head_attention(x, x, w, kind="self_spatial", layer=3)
    assert [(t.kind, t.layer, t.head) for t in traces] == [
        ("self_spatial", 3, 0), ("self_spatial", 3, 1)]


# ----------------------------------------------------------- stream wrappers


def test_temporal_wrapper_single_step(rng):
    x = Tensor(rng.standard_normal((1, 4)))
    w = _make_weights(rng, 4, 4, 2)
    out, traces = self_attention_temporal(x, w, window=WindowSpec.symmetric(0))
    assert out.shape == (1, 4)
    for t in traces:
        assert t.kind == "self_temporal"
        np.testing.assert_array_equal(t.weights, [[1.0]])


def test_wide_window_equals_dense(rng):
    x = Tensor(rng.standard_normal((5, 4)))
    w = _make_weights(rng, 4, 8, 2)
    banded, _ = self_attention_temporal(x, w, window=WindowSpec.symmetric(5))
    dense, _ = self_attention_temporal(x, w, window=None)
    np.testing.assert_allclose(banded.data, dense.data, atol=1e-12)


def test_spatial_wrapper_permutation_equivariance(rng):
    x = Tensor(rng.standard_normal((6, 4)))
    w = _make_weights(rng, 4, 8, 2)
    out, traces = self_attention_spatial(x, w)
    assert all(t.kind == "self_spatial" for t in traces)
    perm = rng.permutation(6)
    out_perm, _ = self_attention_spatial(Tensor(x.data[perm]), w)
    np.testing.assert_allclose(out_perm.data, out.data[perm], atol=1e-10)


def test_spatial_wrapper_applies_rank(rng):
    x = Tensor(rng.standard_normal((5, 4)))
    w = _make_weights(rng, 4, 4, 1)
    _, traces = self_attention_spatial(x, w, rank=RankSpec(k=1))
    assert np.all((traces[0].weights > 0).sum(axis=1) == 1)


# ---------------------------------------------------------------- co-attention


def test_co_attention_output_follows_queries(rng):
    main = Tensor(rng.standard_normal((7, 4)))  # keys/values
    sub = Tensor(rng.standard_normal((3, 4)))  # queries
    out, traces = co_attention(main, sub, _make_weights(rng, 4, 8, 2))
    assert out.shape == (3, 4)
    for t in traces:
        assert t.kind == "co_attention"
        assert t.weights.shape == (3, 7)


def test_co_attention_single_main_row_collapses(rng):
    main = Tensor(rng.standard_normal((1, 4)))
    sub = Tensor(rng.standard_normal((5, 4)))
    w = _make_weights(rng, 4, 4, 1)
    out, _ = co_attention(main, sub, w)
    # every query sees one key with weight 1, so all outputs coincide
    expected = main.data @ w.w_value.data @ w.w_out.data
    np.testing.assert_allclose(out.data, np.repeat(expected, 5, axis=0),
                               atol=1e-12)


def test_co_attention_matches_cross_oracle(rng):
    main = Tensor(rng.standard_normal((6, 4)))
    sub = Tensor(rng.standard_normal((3, 4)))
    w = _make_weights(rng, 4, 8, 2)
    out, _ = co_attention(main, sub, w)
    expected = _attention_oracle(sub.data, main.data, w.w_query.data,
                                 w.w_key.data, w.w_value.data, w.w_out.data, 2)
    np.testing.assert_allclose(out.data, expected, atol=ORACLE_TOL)


# --------------------------------------------------------------- score export


def _unit_trace(layer=0, head=0):
    return HeadTrace(kind="self_temporal", layer=layer, head=head,
                     scores=ScoreMatrix(np.zeros((1, 1))),
                     weights=np.array([[1.0]]))


def test_export_single_weight_file(tmp_path):
    trace = _unit_trace()
    (path,) = export_scores([trace], tmp_path)
    assert path.name == "0_0.tsv"
    assert path.read_text() == "1\n"


def test_export_round_trips_weights(tmp_path, rng):
    x = Tensor(rng.standard_normal((4, 6)))
    w = _make_weights(rng, 6, 8, 2)
    _, traces = multi_head_attention(x, x, w, layer=1)
    paths = export_scores(traces, tmp_path)
    assert sorted(p.name for p in paths) == ["1_0.tsv", "1_1.tsv"]
    for trace, path in zip(traces, paths):
        loaded = np.loadtxt(path, delimiter="\t", ndmin=2)
        np.testing.assert_array_equal(loaded, trace.weights)


def test_export_rejects_duplicates_and_bad_rows(tmp_path):
    with pytest.raises(ValueError, match="duplicate"):
        export_scores([_unit_trace(), _unit_trace()], tmp_path)
    bad = _unit_trace()
    bad.weights = np.array([[0.5, 0.4]])
    with pytest.raises(ValueError, match="sum"):
        export_scores([bad], tmp_path)


# ------------------------------------------------------------ gradient checks


def test_scaled_dot_attention_gradients(rng):
    q = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    k = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    v = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
    mask = AdditiveMask(np.where(rng.random((3, 5)) < 0.6, 0.0, -np.inf))

    def loss():
        out, _, _ = scaled_dot_attention(q, k, v, mask)
        return reduce_sum(out)

    assert gradient_check(loss, [q, k, v]) < GRAD_TOL


@pytest.mark.parametrize("strategy", [None, WindowSpec.symmetric(1),
                                      RankSpec(k=2)])
def test_multi_head_attention_gradients(rng, strategy):
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    w = _make_weights(rng, 6, 8, 2, grad=True)
    leaves = [x, w.w_query, w.w_key, w.w_value, w.w_out]

    def loss():
        out, _ = multi_head_attention(x, x, w, strategy=strategy)
        return reduce_sum(out)

    assert gradient_check(loss, leaves) < GRAD_TOL


def test_co_attention_gradients(rng):
    main = Tensor(rng.standard_normal((5, 6)), requires_grad=True)
    sub = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    w = _make_weights(rng, 6, 8, 2, grad=True)
    leaves = [main, sub, w.w_query, w.w_key, w.w_value, w.w_out]

    def loss():
        out, _ = co_attention(main, sub, w)
        return reduce_sum(out)

    assert gradient_check(loss, leaves) < GRAD_TOL
