"""Deep-embedding-clustering math: Student-t soft assignment, sharpened
target distribution, KL clustering loss, soft-cosine inter-cluster penalty,
and k-means centroid initialization."""

import warnings

import numpy as np

from .nn import tensor as T
from .nn.tensor import Tensor


def soft_assign(emb, centroids, alpha=1.0):
    """Student-t kernel q_ij = (1 + ||e_i - mu_j||^2 / alpha)^(-(alpha+1)/2),
    row-normalized. emb (N, D) and centroids (k, D) may be Tensors or arrays;
    returns a Tensor (N, k)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    e = emb if isinstance(emb, Tensor) else Tensor(np.asarray(emb, dtype=np.float64))
    mu = centroids if isinstance(centroids, Tensor) else Tensor(np.asarray(centroids, dtype=np.float64))
    n, d = e.shape
    k = mu.shape[0]
    diff = T.sub(T.reshape(e, (n, 1, d)), T.reshape(mu, (1, k, d)))
    d2 = T.tsum(T.mul(diff, diff), axis=2)
    base = T.power(T.add(T.mul(d2, 1.0 / alpha), 1.0), -(alpha + 1.0) / 2.0)
    return T.div(base, T.tsum(base, axis=1, keepdims=True))


def target_distribution(q):
    """p_ij = (q_ij^2 / f_j) / sum_j'(q_ij'^2 / f_j'), f_j = column sums.
    Pure numpy; the result is used as a non-differentiated target."""
    q = np.asarray(q, dtype=np.float64)
    f = q.sum(axis=0)
    zero = f == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} empty cluster column(s) in target distribution")
    w = np.zeros_like(q)
    nz = ~zero
    w[:, nz] = q[:, nz] ** 2 / f[nz]
    return w / w.sum(axis=1, keepdims=True)


def kl_loss(p, q):
    """Sum_i sum_j p_ij ln(p_ij / q_ij); p is a constant array, q a Tensor.
    Zero p entries contribute nothing (and shield q zeros at those spots)."""
    p = np.asarray(p, dtype=np.float64)
    mask = p > 0
    # p*ln(p) is constant; only -p*ln(q) carries gradient
    const = float((p[mask] * np.log(p[mask])).sum())
    cross = T.tsum(T.mul(T.log(T.getitem(q, mask)), p[mask]))
    return T.add(T.mul(cross, -1.0), const)


def abs_soft_cos_np(ci, cj, s=None):
    """|ci^T S cj| / sqrt((ci^T S ci)(cj^T S cj)); 0 if either vector is zero.
    s=None means the identity metric."""
    ci = np.asarray(ci, dtype=np.float64)
    cj = np.asarray(cj, dtype=np.float64)
    if s is None:
        num = abs(ci @ cj)
        den2 = (ci @ ci) * (cj @ cj)
    else:
        num = abs(ci @ s @ cj)
        den2 = (ci @ s @ ci) * (cj @ s @ cj)
    if den2 <= 0:
        return 0.0
    return float(num / np.sqrt(den2))


def abs_soft_cos(ci, cj, s=None):
    """Tensor version for the training path; callers exclude zero vectors."""
    if s is None:
        num = T.absolute(T.tsum(T.mul(ci, cj)))
        den = T.mul(T.tsum(T.mul(ci, ci)), T.tsum(T.mul(cj, cj)))
    else:
        si = T.matmul(s, T.reshape(ci, (-1, 1)))
        sj = T.matmul(s, T.reshape(cj, (-1, 1)))
        num = T.absolute(T.tsum(T.mul(ci, T.reshape(sj, (-1,)))))
        den = T.mul(T.tsum(T.mul(ci, T.reshape(si, (-1,)))), T.tsum(T.mul(cj, T.reshape(sj, (-1,)))))
    return T.div(num, T.sqrt(den))


def sim_matrix(a, eps=1e-4):
    """S = A^T A + eps*I, symmetric positive definite by construction."""
    d = a.shape[0]
    return T.add(T.matmul(T.transpose(a), a), eps * np.eye(d, dtype=a.data.dtype))


def pairwise_cos_penalty(cluster_feats, nonempty, s=None):
    """Sum of abs_soft_cos over unordered distinct pairs of non-empty cluster
    features. cluster_feats: list of k Tensors (D_c,); nonempty: bool list."""
    k = len(cluster_feats)
    terms = []
    for i in range(k):
        if not nonempty[i]:
            continue
        for j in range(i + 1, k):
            if not nonempty[j]:
                continue
            terms.append(abs_soft_cos(cluster_feats[i], cluster_feats[j], s))
    if not terms:
        return Tensor(np.zeros((), dtype=np.float64))
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return acc


def init_centroids(emb, k, rng, iters=20):
    """k-means++ seeding followed by Lloyd iterations. Deterministic under
    the supplied generator; raises if fewer than k distinct points exist."""
    emb = np.asarray(emb, dtype=np.float64)
    n = emb.shape[0]
    if n < k:
        raise ValueError(f"need at least {k} embeddings, got {n}")
    if np.unique(emb, axis=0).shape[0] < k:
        raise ValueError(f"need at least {k} distinct embeddings")
    centers = np.empty((k, emb.shape[1]))
    centers[0] = emb[int(rng.integers(0, n))]
    d2 = ((emb - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centers[j] = emb[int(rng.choice(n, p=probs))]
        d2 = np.minimum(d2, ((emb - centers[j]) ** 2).sum(axis=1))
    for _ in range(iters):
        dists = ((emb[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dists.argmin(axis=1)
        for j in range(k):
            members = emb[labels == j]
            if members.shape[0] > 0:
                centers[j] = members.mean(axis=0)
    return centers
