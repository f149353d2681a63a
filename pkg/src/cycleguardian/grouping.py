"""Slice spectrogram stacks into overlapping frame groups."""

from dataclasses import dataclass

import numpy as np

G_FRAMES = 20
STRIDE = 15


@dataclass(frozen=True)
class GroupIndexPlan:
    t_frames: int
    g_frames: int
    stride: int
    n_groups: int
    starts: tuple


def plan_groups(t_frames, g_frames=G_FRAMES, stride=STRIDE):
    """Floor-division grouping: N_g = floor((T - G)/stride) + 1, trailing
    frames that do not fill a group are discarded."""
    if not (0 < stride < g_frames <= t_frames):
        raise ValueError(f"need 0 < stride({stride}) < g_frames({g_frames}) <= t_frames({t_frames})")
    n_groups = (t_frames - g_frames) // stride + 1
    starts = tuple(i * stride for i in range(n_groups))
    return GroupIndexPlan(t_frames, g_frames, stride, n_groups, starts)


def slice_groups(stack, plan):
    """Cut a (C, F, T) stack into plan.n_groups views of shape (C, F, G)."""
    if stack.shape[-1] != plan.t_frames:
        raise ValueError(f"stack has {stack.shape[-1]} frames, plan expects {plan.t_frames}")
    return [stack[:, :, s : s + plan.g_frames] for s in plan.starts]


def group_batch(stacks, plan):
    """Stack a batch of per-cycle group lists into one (B, N_g, C, F, G) array."""
    return np.stack([np.stack(slice_groups(s, plan), axis=0) for s in stacks], axis=0)
