import numpy as np
import pytest

from cycleguardian import clustering, mixing
from cycleguardian.model import CycleGuardian, ModelConfig, model_from_hyperparams
from cycleguardian.nn import tensor as T
from cycleguardian.nn.tensor import Tensor

from conftest import mini_model, mini_model_config


def mini_stacks(rng, b=2, n_g=4):
    return rng.standard_normal((b, n_g, 3, 12, 6)).astype(np.float32)


def test_forward_single_shapes():
    m = mini_model()
    rng = np.random.default_rng(0)
    out = m.forward_single(mini_stacks(rng, b=3, n_g=5))
    assert out["groups"].shape == (3, 5, 8)
    assert out["z"].data.shape == (3, 8)
    assert out["c"].data.shape == (3, 3, 8)
    assert out["e"].data.shape == (15, 4)
    assert out["q"].data.shape == (15, 3)
    assert out["hard"].shape == (15,)
    assert out["logits"].data.shape == (3, 4)


def test_uniform_fusion_of_a_single_cluster():
    """fusion_w starts at zeros -> softmax uniform; with every group pinned
    to cluster 0 the fused z is c_0 / k."""
    m = mini_model(seed=1)
    out = m.forward_single(mini_stacks(np.random.default_rng(1)), hard=np.zeros(8, dtype=int))
    np.testing.assert_allclose(
        out["z"].data, out["c"].data[:, 0, :] / 3.0, rtol=1e-5, atol=1e-7
    )
    assert np.all(out["nonempty"][:, 0])
    assert not np.any(out["nonempty"][:, 1:])
    np.testing.assert_array_equal(out["c"].data[:, 1:, :], 0.0)


def test_identical_samples_share_cluster_features():
    m = mini_model(seed=2)
    rng = np.random.default_rng(2)
    one = mini_stacks(rng, b=1)
    stacks = np.concatenate([one, one], axis=0)
    m.set_centroids(np.random.default_rng(3).standard_normal((3, 4)).astype(np.float32))
    out = m.forward_single(stacks)
    np.testing.assert_array_equal(out["c"].data[0], out["c"].data[1])
    np.testing.assert_array_equal(out["z"].data[0], out["z"].data[1])


def test_fusion_weights_mix_cluster_features():
    m = mini_model(seed=3)
    m.fusion_w.data = np.array([1.0, -1.0, 0.5], dtype=np.float32)
    rng = np.random.default_rng(4)
    m.set_centroids(rng.standard_normal((3, 4)).astype(np.float32))
    out = m.forward_single(mini_stacks(rng))
    w = np.exp(m.fusion_w.data.astype(np.float64))
    w /= w.sum()
    manual = (out["c"].data * w[None, :, None]).sum(axis=1)
    np.testing.assert_allclose(out["z"].data, manual, rtol=1e-5, atol=1e-6)


def test_dual_branch_empty_replacement_matches_single():
    m = mini_model(seed=4)
    rng = np.random.default_rng(5)
    stacks = mini_stacks(rng, b=2, n_g=4)
    plan = mixing.MixPlan(lam=1.0, donors=np.array([1, 0]), replaced=np.array([], dtype=int), n_groups=4)
    out = m.dual_branch_forward(stacks, plan)
    np.testing.assert_allclose(out["z_hat"].data, out["z"].data, atol=1e-6)
    assert out["head_out"].data.shape == (2, 8)


def test_dual_branch_full_replacement_swaps_samples():
    m = mini_model(seed=5)
    rng = np.random.default_rng(6)
    stacks = mini_stacks(rng, b=2, n_g=4)
    m.set_centroids(rng.standard_normal((3, 4)).astype(np.float32))
    plan = mixing.MixPlan(lam=0.0, donors=np.array([1, 0]), replaced=np.arange(4), n_groups=4)
    out = m.dual_branch_forward(stacks, plan)
    np.testing.assert_allclose(out["z_hat"].data[0], out["z"].data[1], atol=1e-6)
    np.testing.assert_allclose(out["z_hat"].data[1], out["z"].data[0], atol=1e-6)


def test_predict_proba_rows_are_distributions():
    m = mini_model(seed=6)
    p = m.predict_proba(mini_stacks(np.random.default_rng(7), b=3))
    assert p.shape == (3, 4)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(p >= 0)
    # inference path must not build a graph
    assert m.centroids.grad is None


def test_stop_grad_groups_blocks_encoder():
    def kl_through(m):
        out = m.forward_single(mini_stacks(np.random.default_rng(8)))
        q = out["q"]
        p = clustering.target_distribution(q.data)
        m.zero_grad()
        clustering.kl_loss(p, q).backward()
        gfe_has = any(p_.grad is not None for p_ in m.gfe.parameters())
        red_has = any(p_.grad is not None for p_ in m.reducer.parameters())
        return gfe_has, red_has

    gfe_has, red_has = kl_through(mini_model(seed=7))
    assert gfe_has and red_has
    gfe_has, red_has = kl_through(mini_model(seed=7, stop_grad_groups=True))
    assert not gfe_has and red_has


def test_sim_mode_controls_metric():
    ident = mini_model(seed=8, sim_mode="identity")
    assert ident.sim_s() is None
    assert not ident.sim_a.requires_grad
    learned = mini_model(seed=8)
    s = learned.sim_s()
    assert s is not None
    np.testing.assert_allclose(s.data, s.data.T, atol=1e-6)


def test_cos_penalty_known_value():
    m = mini_model(seed=9, sim_mode="identity")
    c = np.zeros((2, 3, 8))
    c[0, 0, 0] = 1.0  # orthogonal trio
    c[0, 1, 1] = 1.0
    c[0, 2, 2] = 1.0
    c[1, 0, :2] = [1.0, 2.0]  # identical pair, third empty
    c[1, 1, :2] = [1.0, 2.0]
    nonempty = np.array([[True, True, True], [True, True, False]])
    pen = m.cos_penalty(Tensor(c), nonempty)
    assert abs(pen.data - 0.5) < 1e-9


def test_set_centroids_validates_shape():
    m = mini_model(seed=10)
    mu = np.arange(12, dtype=np.float32).reshape(3, 4)
    m.set_centroids(mu)
    np.testing.assert_array_equal(m.centroids.data, mu)
    with pytest.raises(ValueError):
        m.set_centroids(np.zeros((4, 4), dtype=np.float32))


def test_hyperparams_rebuild_bit_identical():
    m = mini_model(seed=11)
    rng = np.random.default_rng(9)
    stacks = mini_stacks(rng)
    rebuilt = model_from_hyperparams(m.hyperparams(), np.random.default_rng(999))
    rebuilt.load_state_dict(m.state_dict())
    rebuilt.eval()
    m.eval()
    np.testing.assert_array_equal(
        m.forward_single(stacks)["logits"].data,
        rebuilt.forward_single(stacks)["logits"].data,
    )


def test_desk_scale_preset():
    cfg = ModelConfig.desk_scale(k=7)
    assert cfg.widths == (8, 16, 32)
    assert (cfg.d_g, cfg.d_e, cfg.d_z) == (64, 16, 64)
    assert cfg.k == 7


def test_encoder_casts_input_dtype():
    m = mini_model(seed=12)
    stacks = np.random.default_rng(10).standard_normal((2, 4, 3, 12, 6))  # float64
    out = m.encode_groups(stacks)
    assert out.data.dtype == np.float32
