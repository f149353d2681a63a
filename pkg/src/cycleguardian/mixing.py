"""Group-mix generation and the contrastive objective between original and
mixed global features."""

from dataclasses import dataclass

import numpy as np

from .nn import tensor as T
from .nn.tensor import Tensor


@dataclass
class MixPlan:
    """One batch's mixing draw. lam is a scalar for the default batch-level
    mode, or a length-B vector when per-sample lambdas are configured;
    replaced is correspondingly one shared index array or a per-sample list."""

    lam: object
    donors: np.ndarray
    replaced: object
    n_groups: int

    def lam_vector(self, batch_size):
        return np.full(batch_size, float(self.lam)) if np.isscalar(self.lam) else np.asarray(self.lam, dtype=np.float64)

    def replaced_for(self, i):
        return self.replaced if isinstance(self.replaced, np.ndarray) else self.replaced[i]


def replacement_count(lam, n_groups):
    return int(round((1.0 - lam) * n_groups))


def sample_mix_plan(rng, batch_size, n_groups, beta_a=2.0, beta_b=2.0, per_sample=False):
    """Draw lambda from Beta(a, b), a donor m != i per sample, and the
    replaced-index set(s) of size round((1 - lambda) * N_g)."""
    if batch_size < 2:
        raise ValueError("mixing needs at least two samples per batch")
    offsets = rng.integers(1, batch_size, size=batch_size)
    donors = (np.arange(batch_size) + offsets) % batch_size
    if per_sample:
        lam = rng.beta(beta_a, beta_b, size=batch_size)
        replaced = [np.sort(rng.choice(n_groups, size=replacement_count(l, n_groups), replace=False)) for l in lam]
    else:
        lam = float(rng.beta(beta_a, beta_b))
        replaced = np.sort(rng.choice(n_groups, size=replacement_count(lam, n_groups), replace=False))
    return MixPlan(lam=lam, donors=donors, replaced=replaced, n_groups=n_groups)


def group_mix(groups, plan):
    """Replace each sample's groups at the plan's indices with the donor's
    groups at the same indices. groups: (B, N_g, D_g) array or Tensor."""
    b = groups.shape[0]
    n_g = groups.shape[1]
    if n_g != plan.n_groups:
        raise ValueError(f"plan built for N_g={plan.n_groups}, got {n_g}")
    lam_vec = plan.lam_vector(b)
    if b < 2 and np.any(lam_vec < 1.0):
        raise ValueError("no donor exists in a batch of one")
    src_sample = np.tile(np.arange(b)[:, None], (1, n_g))
    for i in range(b):
        idx = plan.replaced_for(i)
        src_sample[i, idx] = plan.donors[i]
    rows = (src_sample * n_g + np.arange(n_g)[None, :]).reshape(-1)
    if isinstance(groups, Tensor):
        d = groups.shape[2]
        flat = T.reshape(groups, (b * n_g, d))
        return T.reshape(T.gather_rows(flat, rows), (b, n_g, d))
    flat = np.asarray(groups).reshape(b * n_g, -1)
    return flat[rows].reshape(groups.shape)


def contrastive_loss(head_out, z, donors, lam, tau):
    """L = -(1/B) sum_i [lam * h_i . z_i + (1-lam) * h_i . z_m] / tau.

    head_out: Tensor (B, D), the projection head applied to the mixed-branch
    global features; L2-normalized here. z: original-branch globals, treated
    as constant targets (stop-gradient) and L2-normalized.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    b = head_out.shape[0]
    hn = T.l2_normalize(head_out, axis=1)
    zc = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    norms = np.sqrt((zc * zc).sum(axis=1, keepdims=True))
    zn = zc / np.maximum(norms, 1e-12)
    lam_vec = np.full(b, float(lam)) if np.isscalar(lam) else np.asarray(lam, dtype=np.float64)
    own = T.tsum(T.mul(hn, zn), axis=1)
    don = T.tsum(T.mul(hn, zn[np.asarray(donors)]), axis=1)
    weighted = T.add(T.mul(own, lam_vec), T.mul(don, 1.0 - lam_vec))
    return T.mul(T.tmean(weighted), -1.0 / tau)
