import numpy as np
import pytest

from cycleguardian.nn import tensor as T
from cycleguardian.nn import layers as L
from cycleguardian.nn.tensor import Tensor, no_grad
from cycleguardian.nn.gradcheck import gradcheck
from cycleguardian.nn.optim import Adam
from cycleguardian.nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- autograd

def test_add_broadcast_gradients():
    a = leaf(np.ones((3, 1)))
    b = leaf(np.ones((4,)))
    T.tsum(T.add(a, b)).backward()
    np.testing.assert_array_equal(a.grad, np.full((3, 1), 4.0))
    np.testing.assert_array_equal(b.grad, np.full((4,), 3.0))


def test_mul_gradients_are_cross_terms():
    a = leaf([2.0, 3.0])
    b = leaf([5.0, 7.0])
    T.tsum(T.mul(a, b)).backward()
    np.testing.assert_array_equal(a.grad, [5.0, 7.0])
    np.testing.assert_array_equal(b.grad, [2.0, 3.0])


def test_div_gradient():
    a = leaf([6.0])
    b = leaf([3.0])
    T.div(a, b).backward()
    np.testing.assert_allclose(a.grad, [1.0 / 3.0], atol=1e-15)
    np.testing.assert_allclose(b.grad, [-6.0 / 9.0], atol=1e-15)


def test_matmul_gradients():
    a = leaf(np.arange(6, dtype=float).reshape(2, 3))
    b = leaf(np.arange(12, dtype=float).reshape(3, 4))
    T.tsum(T.matmul(a, b)).backward()
    gy = np.ones((2, 4))
    np.testing.assert_array_equal(a.grad, gy @ b.data.T)
    np.testing.assert_array_equal(b.grad, a.data.T @ gy)


def test_diamond_graph_accumulates():
    x = leaf([3.0])
    b = T.add(x, x)  # 2x
    T.mul(b, b).backward()  # 4x^2 -> d/dx = 8x
    np.testing.assert_allclose(x.grad, [24.0], atol=1e-12)


def test_getitem_mask_scatters_gradient():
    x = leaf(np.arange(6, dtype=float).reshape(2, 3))
    mask = np.array([[True, False, True], [False, True, False]])
    T.tsum(T.getitem(x, mask)).backward()
    np.testing.assert_array_equal(x.grad, mask.astype(float))


def test_gather_rows_accumulates_duplicates():
    x = leaf(np.eye(3))
    T.tsum(T.gather_rows(x, np.array([0, 0, 2]))).backward()
    np.testing.assert_array_equal(x.grad, np.array([[2.0] * 3, [0.0] * 3, [1.0] * 3]))


def test_sum_axis_keepdims_and_mean():
    x = leaf(np.arange(12, dtype=float).reshape(3, 4))
    s = T.tsum(x, axis=0, keepdims=True)
    assert s.data.shape == (1, 4)
    m = T.tmean(x, axis=1)
    np.testing.assert_allclose(m.data, x.data.mean(axis=1), atol=1e-15)
    T.tsum(m).backward()
    np.testing.assert_allclose(x.grad, np.full((3, 4), 0.25), atol=1e-15)


def test_reshape_transpose_roundtrip_gradient():
    x = leaf(np.arange(24, dtype=float).reshape(2, 3, 4))
    y = T.transpose(T.reshape(x, (6, 4)), (1, 0))
    T.tsum(T.mul(y, 2.0)).backward()
    np.testing.assert_array_equal(x.grad, np.full((2, 3, 4), 2.0))


def test_concat_splits_gradient():
    a = leaf(np.ones((2, 2)))
    b = leaf(np.ones((3, 2)))
    out = T.concat([a, b], axis=0)
    assert out.data.shape == (5, 2)
    T.tsum(T.mul(out, np.arange(5, dtype=float)[:, None])).backward()
    np.testing.assert_array_equal(a.grad, [[0.0, 0.0], [1.0, 1.0]])
    np.testing.assert_array_equal(b.grad, [[2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])


def test_stack_rows_shape():
    rows = [Tensor(np.full(3, float(i))) for i in range(4)]
    out = T.stack_rows(rows)
    np.testing.assert_array_equal(out.data, np.arange(4, dtype=float)[:, None] * np.ones(3))


def test_softmax_and_log_softmax_agree():
    x = leaf(np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]))
    s = T.softmax(x)
    np.testing.assert_allclose(s.data.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(T.log_softmax(x).data, np.log(s.data), atol=1e-12)


def test_log_softmax_gradient_is_onehot_minus_probs():
    x = leaf(np.array([[0.3, -1.2, 2.0]]))
    onehot = np.array([[0.0, 1.0, 0.0]])
    T.tsum(T.mul(T.log_softmax(x), onehot)).backward()
    probs = np.exp(x.data) / np.exp(x.data).sum()
    np.testing.assert_allclose(x.grad, onehot - probs, atol=1e-12)


def test_l2_normalize_rows():
    x = leaf(np.array([[3.0, 4.0], [0.6, 0.8]]))
    n = T.l2_normalize(x, axis=1)
    np.testing.assert_allclose(np.sqrt((n.data**2).sum(axis=1)), 1.0, atol=1e-9)


def test_l2_normalize_zero_row_has_finite_backward():
    x = leaf(np.array([[0.0, 0.0], [1.0, 2.0]]))
    out = T.tsum(T.l2_normalize(x, axis=1))
    out.backward()
    assert np.all(np.isfinite(x.grad))


def test_relu_and_abs_subgradients():
    x = leaf([-2.0, 3.0])
    T.tsum(T.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])
    y = leaf([-2.0, 3.0])
    T.tsum(T.absolute(y)).backward()
    np.testing.assert_array_equal(y.grad, [-1.0, 1.0])


def test_no_grad_suppresses_graph():
    x = leaf([1.0, 2.0])
    with no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad
    assert y._parents == ()


def test_pointwise_ops_pass_gradcheck():
    rng = np.random.default_rng(0)
    p = leaf(rng.uniform(0.5, 2.0, size=8))

    def loss():
        y = T.add(T.exp(T.mul(p, 0.3)), T.log(p))
        y = T.add(y, T.sqrt(p))
        y = T.add(y, T.gelu(p))
        y = T.add(y, T.erf(p))
        y = T.add(y, T.power(p, 3.0))
        return T.tsum(T.mul(y, y))

    gradcheck(loss, [("p", p)], h=1e-5, rtol=1e-6)


# ---------------------------------------------------------------- gradcheck

def test_gradcheck_quadratic_exact():
    p = leaf(np.array([1.0, -2.0, 0.5]))

    def loss():
        return T.mul(T.tsum(T.mul(p, p)), 0.5)

    records = gradcheck(loss, [("p", p)], h=1e-4, rtol=1e-6)
    for _, i, ana, _, _ in records:
        assert abs(ana - p.data[i]) < 1e-12


def test_gradcheck_two_layer_net():
    rng = np.random.default_rng(1)
    w1 = leaf(rng.standard_normal((5, 7)) * 0.3)
    b1 = leaf(np.zeros(7))
    w2 = leaf(rng.standard_normal((7, 2)) * 0.3)
    x = rng.standard_normal((4, 5))
    target = rng.standard_normal((4, 2))

    def loss():
        h = T.gelu(T.add(T.matmul(Tensor(x), w1), b1))
        d = T.sub(T.matmul(h, w2), target)
        return T.tmean(T.mul(d, d))

    gradcheck(loss, [("w1", w1), ("b1", b1), ("w2", w2)], h=1e-4, rtol=1e-4)


def test_gradcheck_constant_loss_accepts_missing_grads():
    p = leaf(np.array([1.0, 2.0]))

    def loss():
        return Tensor(np.float64(3.0))

    gradcheck(loss, [("p", p)], h=1e-4, rtol=1e-6)


def test_gradcheck_rejects_float32():
    p = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(TypeError):
        gradcheck(lambda: T.tsum(p), [("p", p)])


# ---------------------------------------------------------------- conv oracle

def brute_conv(x, w, b, stride, pad):
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((bsz, cout, ho, wo))
    for n in range(bsz):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[n, o, i, j] = (patch * w[o]).sum() + b[o]
    return out


def test_conv2d_matches_direct_summation():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    for stride, pad in ((1, 1), (2, 1), (1, 0)):
        got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad)
        np.testing.assert_allclose(got.data, brute_conv(x, w, b, stride, pad), atol=1e-10)


def test_conv2d_gradients_pass_gradcheck():
    rng = np.random.default_rng(3)
    x = leaf(rng.standard_normal((2, 2, 5, 4)))
    w = leaf(rng.standard_normal((3, 2, 3, 3)) * 0.4)
    b = leaf(np.zeros(3))

    def loss():
        y = T.conv2d(x, w, b, 2, 1)
        return T.tsum(T.mul(y, y))

    gradcheck(loss, [("x", x), ("w", w), ("b", b)], h=1e-4, rtol=1e-4, max_probes=12)


# ---------------------------------------------------------------- layers

def test_kaiming_bound():
    rng = np.random.default_rng(4)
    w = L.kaiming_uniform(rng, (200, 50), fan_in=50, dtype=np.float64)
    bound = np.sqrt(6.0 / 50)
    assert np.abs(w).max() <= bound
    assert np.abs(w).max() > 0.9 * bound  # the range is actually used


def test_linear_is_affine():
    rng = np.random.default_rng(5)
    lin = L.Linear(3, 2, rng, dtype=np.float64)
    x = rng.standard_normal((4, 3))
    np.testing.assert_allclose(
        lin(Tensor(x)).data, x @ lin.weight.data + lin.bias.data, atol=1e-12
    )


def test_batchnorm2d_normalizes_and_tracks_stats():
    rng = np.random.default_rng(6)
    bn = L.BatchNorm2d(3, dtype=np.float64)
    x = 2.0 + 3.0 * rng.standard_normal((4, 3, 5, 5))
    y = bn(Tensor(x)).data
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(y.std(axis=(0, 2, 3)), 1.0, atol=1e-3)
    mu = x.mean(axis=(0, 2, 3))
    n = 4 * 5 * 5
    var_u = x.var(axis=(0, 2, 3)) * n / (n - 1)
    np.testing.assert_allclose(bn._buffers["running_mean"], 0.1 * mu, atol=1e-12)
    np.testing.assert_allclose(bn._buffers["running_var"], 0.9 + 0.1 * var_u, atol=1e-12)


def test_batchnorm2d_scale_invariant_within_batch():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 2, 3, 3))
    a = L.BatchNorm2d(2, dtype=np.float64)(Tensor(x)).data
    b = L.BatchNorm2d(2, dtype=np.float64)(Tensor(2.0 * x)).data
    # exact only in the eps -> 0 limit; eps=1e-5 leaves ~1e-5 residue
    np.testing.assert_allclose(a, b, atol=1e-4)


def test_batchnorm2d_eval_uses_running_stats():
    bn = L.BatchNorm2d(2, dtype=np.float64).eval()
    x = np.random.default_rng(8).standard_normal((3, 2, 4, 4))
    y = bn(Tensor(x)).data
    # fresh running stats are (0, 1): output is x up to the eps shrink
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5), atol=1e-12)


def test_batchnorm1d_moments():
    rng = np.random.default_rng(9)
    bn = L.BatchNorm1d(4, dtype=np.float64)
    y = bn(Tensor(5.0 + rng.standard_normal((16, 4)))).data
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-10)


def test_layernorm_per_row():
    rng = np.random.default_rng(10)
    ln = L.LayerNorm(6, dtype=np.float64)
    y = ln(Tensor(rng.standard_normal((3, 6)) * 4.0)).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(y.std(axis=-1), 1.0, atol=1e-3)


def test_cbr_halves_spatial_dims():
    rng = np.random.default_rng(11)
    cbr = L.CBR(3, 8, rng)
    y = cbr(Tensor(rng.standard_normal((2, 3, 84, 20)).astype(np.float32)))
    assert y.data.shape == (2, 8, 42, 10)


def test_gfe_unit_flat_dim_and_shapes():
    rng = np.random.default_rng(12)
    gfe = L.GfeUnit(rng, widths=(16, 32, 64), d_g=128, input_hw=(84, 20))
    assert gfe.flat_dim == 64 * 11 * 3  # 2112 after three stride-2 stages
    assert gfe.proj.weight.data.shape == (2112, 128)
    x = rng.standard_normal((2, 3, 84, 20)).astype(np.float32)
    assert gfe(Tensor(x)).data.shape == (2, 128)


def test_gfe_unit_zero_input_gives_zero_output():
    gfe = L.GfeUnit(np.random.default_rng(13), widths=(4, 8), d_g=6, input_hw=(12, 6))
    y = gfe(Tensor(np.zeros((3, 3, 12, 6), dtype=np.float32)))
    np.testing.assert_array_equal(y.data, 0.0)


def test_reducer_and_heads_shapes():
    rng = np.random.default_rng(14)
    red = L.Reducer(16, 4, rng)
    x = Tensor(np.random.default_rng(0).standard_normal((5, 16)).astype(np.float32))
    assert red(x).data.shape == (5, 4)
    assert red.reconstruct(x).data.shape == (5, 16)
    proj = L.ClusterProjector(16, 8, rng)
    assert proj(x).data.shape == (5, 8)
    head = L.ProjectionHead(16, rng)
    assert head(x).data.shape == (5, 16)
    clf = L.ClassifierHead(16, 4, rng)
    assert clf(x).data.shape == (5, 4)


# ---------------------------------------------------------------- module registry

def test_named_parameters_use_dotted_paths():
    rng = np.random.default_rng(15)
    gfe = L.GfeUnit(rng, widths=(4, 8), d_g=6, input_hw=(12, 6))
    names = [n for n, _ in gfe.named_parameters()]
    assert "stages.0.conv.weight" in names
    assert "proj.bias" in names
    assert len(names) == len(set(names))


def test_train_eval_recurses_into_lists():
    gfe = L.GfeUnit(np.random.default_rng(16), widths=(4, 8), d_g=6, input_hw=(12, 6))
    gfe.eval()
    assert not gfe.stages[0].bn.training
    gfe.train()
    assert gfe.stages[1].bn.training


def test_state_dict_roundtrip_and_errors():
    rng = np.random.default_rng(17)
    a = L.GfeUnit(rng, widths=(4, 8), d_g=6, input_hw=(12, 6))
    b = L.GfeUnit(np.random.default_rng(18), widths=(4, 8), d_g=6, input_hw=(12, 6))
    b.load_state_dict(a.state_dict())
    for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
    for (_, ba), (_, bb) in zip(a.named_buffers(), b.named_buffers()):
        np.testing.assert_array_equal(ba, bb)

    sd = a.state_dict()
    sd.pop("proj.bias")
    with pytest.raises(ValueError, match="missing"):
        b.load_state_dict(sd)
    sd = a.state_dict()
    sd["bogus"] = np.zeros(3)
    with pytest.raises(ValueError, match="extra"):
        b.load_state_dict(sd)
    sd = a.state_dict()
    sd["proj.bias"] = np.zeros(7)
    with pytest.raises(ValueError, match="shape"):
        b.load_state_dict(sd)


def test_zero_grad_clears():
    lin = L.Linear(2, 2, np.random.default_rng(19), dtype=np.float64)
    T.tsum(lin(Tensor(np.ones((1, 2))))).backward()
    assert lin.weight.grad is not None
    lin.zero_grad()
    assert lin.weight.grad is None and lin.bias.grad is None


# ---------------------------------------------------------------- optimizer

def test_adam_first_step_magnitude():
    p = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    opt = Adam([p], lr=0.01)
    p.grad = np.array([0.5, -2.0])
    opt.step()
    np.testing.assert_allclose(np.abs(p.data - 1.0), 0.01, rtol=1e-6)
    assert p.data[0] < 1.0 < p.data[1] + 1.0  # moves against the gradient
    assert p.data[1] > 1.0


def test_adam_slots_stay_float64():
    p = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    opt = Adam([p])
    assert opt._m[0].dtype == np.float64
    assert opt._v[0].dtype == np.float64
    p.grad = np.ones(3, dtype=np.float32)
    opt.step()
    assert p.data.dtype == np.float32


def test_adam_skips_missing_grads():
    p = Tensor(np.ones(2), requires_grad=True)
    q = Tensor(np.ones(2), requires_grad=True)
    opt = Adam([p, q], lr=0.1)
    p.grad = np.ones(2)
    opt.step()
    np.testing.assert_array_equal(q.data, np.ones(2))
    assert np.all(p.data < 1.0)


def test_adam_lr_is_adjustable():
    p = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam([p], lr=0.5)
    p.grad = np.ones(1)
    opt.step()
    first = abs(float(p.data[0]))
    opt.lr = 0.05
    p.grad = np.ones(1)
    before = float(p.data[0])
    opt.step()
    second = abs(float(p.data[0]) - before)
    assert first > 5 * second


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(20)
    state = {
        "a": rng.standard_normal((3, 4)).astype(np.float32),
        "b": rng.standard_normal(7),
        "steps": np.arange(5, dtype=np.int64),
        "noncontig": np.asarray(rng.standard_normal((4, 4))[::2, ::2]),
    }
    meta = {"epoch": 3, "score": 0.5, "task": "four_class"}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state, meta)
    got, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(got) == set(state)
    for k in state:
        assert got[k].dtype == state[k].dtype
        np.testing.assert_array_equal(got[k], state[k])


def test_checkpoint_detects_corruption(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": np.ones(8)})
    blob = bytearray(path.read_bytes())
    blob[-3] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="CRC"):
        load_checkpoint(path)


def test_checkpoint_detects_truncation(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": np.ones(8)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "not.ckpt"
    path.write_bytes(b"RIFFxxxxWAVE")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_rejects_future_version(tmp_path):
    import struct

    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": np.ones(2)})
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
