"""Layer behavior tests: shapes, special cases, and finite-difference gradients."""

import numpy as np
import pytest

from crackpoint import gradcheck as gc
from crackpoint import layers as L
from crackpoint.util import make_rng


# -- gradients ---------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(gc.standard_checks()))
def test_gradient_check(name):
    result = gc.standard_checks()[name]()
    assert result.passed, (
        f"{name}: max relative error {result.max_rel_err:.3e} "
        f">= tolerance {result.tolerance:g}; per tensor {result.per_tensor}")


# -- conv --------------------------------------------------------------------

def test_conv2d_valid_shape_and_known_value():
    conv = L.Conv2D(2, 2, 1, 1, padding="valid", dtype=np.float64)
    conv.params[0][...] = np.ones((2, 2, 1, 1))
    conv.params[1][...] = 0.5
    x = np.arange(9, dtype=np.float64).reshape(1, 3, 3, 1)
    out = conv.forward(x)
    assert out.shape == (1, 2, 2, 1)
    # window sums + bias
    assert out[0, :, :, 0] == pytest.approx(np.array([[8.0, 12.0], [20.0, 24.0]]) + 0.5)


def test_conv2d_same_padding_preserves_shape():
    conv = L.Conv2D(3, 3, 2, 5, padding="same")
    assert conv.out_shape((7, 9, 2)) == (7, 9, 5)
    x = make_rng(0).standard_normal((2, 7, 9, 2)).astype(np.float32)
    assert conv.forward(x).shape == (2, 7, 9, 5)


def test_conv2d_same_stride_shape():
    conv = L.Conv2D(4, 4, 3, 8, padding="same", stride=(1, 4))
    assert conv.out_shape((3, 126, 3)) == (3, 32, 8)


def test_conv2d_pointwise_matches_general_path():
    rng = make_rng(5)
    x = rng.standard_normal((2, 4, 5, 3))
    fast = L.Conv2D(1, 1, 3, 2, padding="valid", rng=make_rng(7), dtype=np.float64)
    out_fast = fast.forward(x)
    # reference: einsum over channels
    ref = np.einsum("bhwc,co->bhwo", x, fast.params[0][0, 0]) + fast.params[1]
    assert out_fast == pytest.approx(ref)
    g = rng.standard_normal(out_fast.shape)
    gx = fast.backward(g)
    assert gx == pytest.approx(np.einsum("bhwo,co->bhwc", g, fast.params[0][0, 0]))


def test_conv2d_without_bias_has_single_param():
    conv = L.Conv2D(3, 3, 2, 4, use_bias=False)
    assert len(conv.params) == 1
    assert conv.n_params == 3 * 3 * 2 * 4


def test_conv2d_shape_errors():
    conv = L.Conv2D(3, 3, 2, 4, padding="valid")
    with pytest.raises(L.ShapeError):
        conv.out_shape((2, 2, 2))
    with pytest.raises(L.ShapeError):
        conv.out_shape((4, 4, 3))
    with pytest.raises(ValueError):
        L.Conv2D(3, 3, 2, 4, padding="reflect")


# -- dense / relu ------------------------------------------------------------

def test_dense_affine():
    dense = L.Dense(3, 2, dtype=np.float64)
    dense.params[0][...] = np.arange(6).reshape(3, 2)
    dense.params[1][...] = [1.0, -1.0]
    out = dense.forward(np.array([[1.0, 0.0, 2.0]]))
    assert out == pytest.approx(np.array([[9.0, 10.0]]))


def test_relu_clamps_and_masks_gradient():
    relu = L.ReLU()
    x = np.array([[-1.0, 0.0, 2.0]])
    assert relu.forward(x) == pytest.approx(np.array([[0.0, 0.0, 2.0]]))
    assert relu.backward(np.ones_like(x)) == pytest.approx(np.array([[0.0, 0.0, 1.0]]))


# -- batch norm --------------------------------------------------------------

def test_batchnorm_normalizes_training_batch():
    bn = L.BatchNorm(2, dtype=np.float64)
    x = make_rng(1).standard_normal((64, 3, 3, 2)) * 3.0 + 5.0
    out = bn.forward(x, training=True)
    assert out.reshape(-1, 2).mean(axis=0) == pytest.approx([0.0, 0.0], abs=1e-10)
    assert out.reshape(-1, 2).std(axis=0) == pytest.approx([1.0, 1.0], abs=1e-3)


def test_batchnorm_moving_statistics_update():
    bn = L.BatchNorm(1, momentum=0.9, dtype=np.float64)
    x = np.full((4, 1, 1, 1), 10.0)
    bn.forward(x, training=True)
    assert bn.state[0][0] == pytest.approx(0.9 * 0.0 + 0.1 * 10.0)
    assert bn.state[1][0] == pytest.approx(0.9 * 1.0 + 0.1 * 0.0)


def test_batchnorm_inference_uses_state():
    bn = L.BatchNorm(1, dtype=np.float64)
    bn.state[0][...] = 2.0
    bn.state[1][...] = 4.0
    out = bn.forward(np.array([[[[4.0]]]]), training=False)
    assert out[0, 0, 0, 0] == pytest.approx((4.0 - 2.0) / np.sqrt(4.0 + 1e-5))


def test_batchnorm_empty_batch_raises():
    bn = L.BatchNorm(2)
    with pytest.raises(RuntimeError):
        bn.forward(np.zeros((0, 2, 2, 2), dtype=np.float32), training=True)


def test_batchnorm_nontrainable_count():
    bn = L.BatchNorm(7)
    assert bn.n_params == 14
    assert bn.n_state == 14


# -- pooling -----------------------------------------------------------------

def test_maxpool1d_values_and_floor():
    pool = L.MaxPool1D(4)
    x = np.arange(18, dtype=np.float64).reshape(1, 9, 1, 2)
    out = pool.forward(x)
    assert out.shape == (1, 2, 1, 2)  # trailing odd element dropped
    assert out[0, :, 0, 0] == pytest.approx([6.0, 14.0])


def test_maxpool1d_routes_gradient_to_argmax():
    pool = L.MaxPool1D(2)
    x = np.array([[[[1.0]], [[5.0]], [[3.0]], [[2.0]]]])  # (1, 4, 1, 1)
    pool.forward(x)
    gx = pool.backward(np.array([[[[1.0]], [[1.0]]]]))
    assert gx[0, :, 0, 0] == pytest.approx([0.0, 1.0, 1.0, 0.0])


def test_maxpool1d_tie_goes_to_first_index():
    pool = L.MaxPool1D(2)
    x = np.ones((1, 2, 1, 1))
    pool.forward(x)
    gx = pool.backward(np.ones((1, 1, 1, 1)))
    assert gx[0, :, 0, 0] == pytest.approx([1.0, 0.0])


def test_maxpool2d_shape_and_value():
    pool = L.MaxPool2D((2, 2))
    x = np.arange(16, dtype=np.float64).reshape(1, 4, 4, 1)
    out = pool.forward(x)
    assert out.shape == (1, 2, 2, 1)
    assert out[0, :, :, 0] == pytest.approx(np.array([[5.0, 7.0], [13.0, 15.0]]))
    assert pool.out_shape((5, 5, 3)) == (2, 2, 3)


def test_maxpool2d_same3x3_preserves_shape_and_takes_neighborhood_max():
    pool = L.MaxPool2DSame3x3()
    x = np.zeros((1, 4, 4, 1))
    x[0, 1, 2, 0] = 7.0
    out = pool.forward(x)
    assert out.shape == x.shape
    assert (out[0, 0:3, 1:4, 0] == 7.0).all()
    assert out[0, 3, 0, 0] == 0.0


# -- dropout -----------------------------------------------------------------

def test_dropout_identity_at_inference():
    drop = L.Dropout(0.5, seed=3)
    x = make_rng(2).standard_normal((4, 6))
    assert np.array_equal(drop.forward(x, training=False), x)


def test_dropout_scales_kept_units():
    drop = L.Dropout(0.5, seed=3)
    x = np.ones((2000, 4))
    out = drop.forward(x, training=True)
    kept = out != 0.0
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert kept.mean() == pytest.approx(0.5, abs=0.05)


def test_dropout_mask_reproducible_after_reset():
    drop = L.Dropout(0.3, seed=9)
    x = np.ones((8, 8))
    a = drop.forward(x, training=True)
    drop.reset_rng(9)
    b = drop.forward(x, training=True)
    assert np.array_equal(a, b)


def test_dropout_rejects_bad_rate():
    with pytest.raises(ValueError):
        L.Dropout(1.0)


# -- attention ---------------------------------------------------------------

def test_attention_is_residual():
    # zero value projection makes the layer an exact identity
    att = L.SelfAttention(3, dtype=np.float64)
    att.params[2][...] = 0.0
    x = make_rng(4).standard_normal((2, 4, 5, 3))
    assert att.forward(x) == pytest.approx(x)


def test_attention_width_axis_rows_are_independent():
    att = L.SelfAttention(2, rng=make_rng(6), dtype=np.float64)
    x = make_rng(7).standard_normal((1, 3, 4, 2))
    full = att.forward(x)
    row1 = att.forward(x[:, 1:2])
    assert full[:, 1:2] == pytest.approx(row1)


def test_attention_shape_and_param_count():
    att = L.SelfAttention(8)
    assert att.out_shape((4, 5, 8)) == (4, 5, 8)
    assert att.n_params == 3 * 8 * 8
    with pytest.raises(L.ShapeError):
        att.out_shape((4, 5, 7))


# -- inception block ---------------------------------------------------------

def test_block_channel_budget():
    blk = L.InceptionBlock(3, 16, rng=make_rng(8))
    assert blk.out_shape((6, 6, 3)) == (6, 6, 20)  # 4 + 8 + 4 + 4 = 5F/4
    x = make_rng(9).standard_normal((2, 6, 6, 3)).astype(np.float32)
    assert blk.forward(x, training=True).shape == (2, 6, 6, 20)


def test_block_filter_split():
    blk = L.InceptionBlock(2, 32, rng=make_rng(10))
    convs = [l for l in blk.sub_layers() if isinstance(l, L.Conv2D)]
    assert [c.cout for c in convs] == [8, 16, 8, 8]
    assert [c.kh for c in convs] == [1, 3, 5, 1]
    assert all(not c.use_bias for c in convs)


def test_block_rejects_indivisible_filters():
    with pytest.raises(ValueError):
        L.InceptionBlock(2, 10)


# -- sequential --------------------------------------------------------------

def test_sequential_composition_and_out_shape():
    seq = L.Sequential([L.Dense(4, 3, rng=make_rng(11), dtype=np.float64),
                        L.ReLU(),
                        L.Dense(3, 2, rng=make_rng(12), dtype=np.float64)])
    assert seq.out_shape((4,)) == (2,)
    x = make_rng(13).standard_normal((5, 4))
    out = seq.forward(x)
    assert out.shape == (5, 2)
    step = L.Dense(4, 3, rng=make_rng(11), dtype=np.float64).forward(x)
    assert seq.sub_layers()[0].forward(x) == pytest.approx(step)


def test_zero_grads():
    dense = L.Dense(3, 2, dtype=np.float64)
    dense.forward(np.ones((2, 3)))
    dense.backward(np.ones((2, 2)))
    assert np.abs(dense.grads[0]).sum() > 0
    dense.zero_grads()
    assert np.abs(dense.grads[0]).sum() == 0
