import numpy as np
import pytest

from cycleguardian.grouping import plan_groups, slice_groups, group_batch


def test_group_count_for_default_geometry():
    plan = plan_groups(626, 20, 15)
    assert plan.n_groups == 41
    assert plan.starts[0] == 0
    assert plan.starts[-1] == 600


def test_group_count_for_dense_stride():
    assert plan_groups(626, 20, 5).n_groups == 122


def test_group_count_formula_holds():
    rng = np.random.default_rng(9)
    for _ in range(50):
        g = int(rng.integers(2, 40))
        s = int(rng.integers(1, g))
        t = int(rng.integers(g, 700))
        plan = plan_groups(t, g, s)
        assert plan.n_groups == (t - g) // s + 1
        assert plan.starts[-1] + g <= t


def test_plan_rejects_bad_geometry():
    with pytest.raises(ValueError):
        plan_groups(626, 20, 20)  # stride must keep overlap
    with pytest.raises(ValueError):
        plan_groups(10, 20, 15)  # group longer than the stack
    with pytest.raises(ValueError):
        plan_groups(626, 20, 0)


def test_slices_are_views_with_shared_overlap():
    stack = np.random.default_rng(0).standard_normal((3, 12, 100))
    plan = plan_groups(100, 20, 15)
    groups = slice_groups(stack, plan)
    assert len(groups) == plan.n_groups
    assert all(g.shape == (3, 12, 20) for g in groups)
    assert np.shares_memory(groups[0], stack)
    for a, b in zip(groups, groups[1:]):
        np.testing.assert_array_equal(a[:, :, 15:], b[:, :, :5])


def test_covered_frames_reconstruct_exactly():
    stack = np.random.default_rng(1).standard_normal((3, 8, 626))
    plan = plan_groups(626, 20, 15)
    groups = slice_groups(stack, plan)
    rebuilt = np.concatenate(
        [g[:, :, : plan.stride] for g in groups[:-1]] + [groups[-1]], axis=-1
    )
    np.testing.assert_array_equal(rebuilt, stack[:, :, : plan.starts[-1] + 20])


def test_slice_rejects_mismatched_stack():
    plan = plan_groups(626, 20, 15)
    with pytest.raises(ValueError):
        slice_groups(np.zeros((3, 8, 625)), plan)


def test_group_batch_shape_and_content():
    rng = np.random.default_rng(2)
    stacks = [rng.standard_normal((3, 8, 50)).astype(np.float32) for _ in range(4)]
    plan = plan_groups(50, 10, 8)
    out = group_batch(stacks, plan)
    assert out.shape == (4, plan.n_groups, 3, 8, 10)
    assert out.dtype == np.float32
    np.testing.assert_array_equal(out[2, 1], stacks[2][:, :, 8:18])
