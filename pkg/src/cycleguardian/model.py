"""Full classifier: group encoder, embedding reducer, Student-t clustering,
cluster-projection fusion, projection/classifier heads, and the dual-branch
forward used by the contrastive objective. Both branches run through one
parameter registry; nothing is duplicated."""

from dataclasses import dataclass

import numpy as np

from . import clustering, mixing
from .nn import layers as L
from .nn import tensor as T
from .nn.tensor import Tensor

CLASS_NAMES = ("normal", "crackle", "wheeze", "both")


@dataclass
class ModelConfig:
    widths: tuple = (16, 32, 64)
    d_g: int = 128
    d_e: int = 32
    d_z: int = 128
    k: int = 5
    alpha_dof: float = 1.0
    sim_mode: str = "learned"  # "learned" or "identity"
    n_classes: int = 4
    n_filters: int = 84
    g_frames: int = 20
    in_channels: int = 3
    tau: float = 0.1
    stop_grad_groups: bool = False

    @classmethod
    def desk_scale(cls, **overrides):
        base = dict(widths=(8, 16, 32), d_g=64, d_e=16, d_z=64)
        base.update(overrides)
        return cls(**base)


class CycleGuardian(L.Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.dtype = dtype
        self.gfe = L.GfeUnit(
            rng,
            in_channels=cfg.in_channels,
            widths=cfg.widths,
            d_g=cfg.d_g,
            input_hw=(cfg.n_filters, cfg.g_frames),
            dtype=dtype,
        )
        self.reducer = L.Reducer(cfg.d_g, cfg.d_e, rng, dtype)
        self.cpf = L.ClusterProjector(cfg.d_g, cfg.d_z, rng, dtype)
        self.head = L.ProjectionHead(cfg.d_z, rng, dtype)
        self.classifier = L.ClassifierHead(cfg.d_z, cfg.n_classes, rng, dtype)
        self.centroids = Tensor(np.zeros((cfg.k, cfg.d_e), dtype=dtype), requires_grad=True)
        self.fusion_w = Tensor(np.zeros(cfg.k, dtype=dtype), requires_grad=True)
        # metric factor A for the soft-cosine constraint; learnable only in
        # "learned" mode, frozen at the identity for the plain-cos ablation
        self.sim_a = Tensor(np.eye(cfg.d_z, dtype=dtype), requires_grad=(cfg.sim_mode == "learned"))

    # -- pieces --------------------------------------------------------------
    def encode_groups(self, stacks):
        """(B, N_g, C, F, G) array -> Tensor (B, N_g, D_g)."""
        arr = np.ascontiguousarray(np.asarray(stacks, dtype=self.dtype))
        b, n_g = arr.shape[0], arr.shape[1]
        x = Tensor(arr.reshape(b * n_g, *arr.shape[2:]))
        g = self.gfe(x)
        return T.reshape(g, (b, n_g, self.cfg.d_g))

    def assign_groups(self, groups):
        """Reduce group features and soft-assign them to the centroids.

        groups: Tensor (B, N_g, D_g). Returns (e, q) with e (B*N_g, D_e) and
        q (B*N_g, k).
        """
        b, n_g, d_g = groups.shape
        flat = T.reshape(groups, (b * n_g, d_g))
        if self.cfg.stop_grad_groups:
            flat = flat.detach()
        e = self.reducer(flat)
        q = clustering.soft_assign(e, self.centroids, self.cfg.alpha_dof)
        return e, q

    def sim_s(self):
        """Current metric for the soft-cosine penalty; None means identity."""
        if self.cfg.sim_mode == "identity":
            return None
        return clustering.sim_matrix(self.sim_a)

    def cpf_fuse(self, groups, hard):
        """Pool same-cluster group features, project, and fuse.

        groups: Tensor (B, N_g, D_g); hard: (B*N_g,) cluster ids.
        Returns (z, c, nonempty): z (B, D_z); c (B, k, D_z) with zero rows for
        empty clusters; nonempty boolean (B, k).
        """
        b, n_g, d_g = groups.shape
        k = self.cfg.k
        hard = np.asarray(hard).reshape(b, n_g)
        pool = np.zeros((b * k, b * n_g), dtype=self.dtype)
        nonempty = np.zeros((b, k), dtype=bool)
        for i in range(b):
            for j in range(k):
                members = np.nonzero(hard[i] == j)[0]
                if members.size:
                    pool[i * k + j, i * n_g + members] = 1.0 / members.size
                    nonempty[i, j] = True
        flat = T.reshape(groups, (b * n_g, d_g))
        pooled = T.matmul(Tensor(pool), flat)
        c = self.cpf(pooled)
        c = T.mul(c, nonempty.reshape(b * k, 1).astype(self.dtype))
        c = T.reshape(c, (b, k, self.cfg.d_z))
        w = T.softmax(T.reshape(self.fusion_w, (1, -1)), axis=1)
        z = T.tsum(T.mul(c, T.reshape(w, (1, k, 1))), axis=1)
        return z, c, nonempty

    def fuse_from_groups(self, groups, hard=None):
        """Cluster-and-fuse one branch: returns (z, c, nonempty, e, q, hard).

        hard may be pinned by the caller (gradient checks differentiate the
        loss given the step's discrete assignments); by default it is the
        argmax of the current soft assignment.
        """
        e, q = self.assign_groups(groups)
        if hard is None:
            hard = q.data.argmax(axis=1)
        z, c, nonempty = self.cpf_fuse(groups, hard)
        return z, c, nonempty, e, q, hard

    def cos_penalty(self, c, nonempty):
        """Mean over the batch of the pairwise soft-cos sum among non-empty
        cluster features."""
        s = self.sim_s()
        b = c.shape[0]
        terms = []
        for i in range(b):
            feats = [T.getitem(c, (i, j)) for j in range(self.cfg.k)]
            terms.append(clustering.pairwise_cos_penalty(feats, nonempty[i], s))
        acc = terms[0]
        for t in terms[1:]:
            acc = T.add(acc, t)
        return T.mul(acc, 1.0 / b)

    def classify(self, z):
        return self.classifier(T.l2_normalize(z, axis=1))

    # -- branch forwards -------------------------------------------------------
    def forward_single(self, stacks, hard=None):
        """Upper branch only (inference path): no mixing, no masking."""
        g = self.encode_groups(stacks)
        z, c, nonempty, e, q, hard = self.fuse_from_groups(g, hard)
        logits = self.classify(z)
        return {"groups": g, "z": z, "c": c, "nonempty": nonempty, "e": e, "q": q, "hard": hard, "logits": logits}

    def dual_branch_forward(self, stacks, plan, hard=None, hard_mix=None):
        """Both branches through the shared weights: the original groups and
        the group-mixed ones. Returns the upper-branch dict plus mixed z_hat
        and its projection-head output. hard/hard_mix may be pinned."""
        out = {}
        g = self.encode_groups(stacks)
        z, c, nonempty, e, q, hard = self.fuse_from_groups(g, hard)
        g_mix = mixing.group_mix(g, plan)
        z_hat, _, _, _, _, hard_mix = self.fuse_from_groups(g_mix, hard_mix)
        out.update(
            groups=g,
            z=z,
            c=c,
            nonempty=nonempty,
            e=e,
            q=q,
            hard=hard,
            hard_mix=hard_mix,
            logits=self.classify(z),
            z_hat=z_hat,
            head_out=self.head(z_hat),
        )
        return out

    def predict_proba(self, stacks):
        with T.no_grad():
            logits = self.forward_single(stacks)["logits"]
            return T.softmax(logits, axis=1).data

    def set_centroids(self, mu):
        if mu.shape != self.centroids.data.shape:
            raise ValueError(f"centroid shape {mu.shape} != {self.centroids.data.shape}")
        self.centroids.data = mu.astype(self.centroids.data.dtype, copy=True)

    def hyperparams(self):
        c = self.cfg
        return {
            "widths": list(c.widths),
            "d_g": c.d_g,
            "d_e": c.d_e,
            "d_z": c.d_z,
            "k": c.k,
            "alpha_dof": c.alpha_dof,
            "sim_mode": c.sim_mode,
            "n_classes": c.n_classes,
            "n_filters": c.n_filters,
            "g_frames": c.g_frames,
            "in_channels": c.in_channels,
            "tau": c.tau,
            "stop_grad_groups": c.stop_grad_groups,
        }


def model_from_hyperparams(h, rng, dtype=np.float32):
    cfg = ModelConfig(
        widths=tuple(h["widths"]),
        d_g=h["d_g"],
        d_e=h["d_e"],
        d_z=h["d_z"],
        k=h["k"],
        alpha_dof=h["alpha_dof"],
        sim_mode=h["sim_mode"],
        n_classes=h["n_classes"],
        n_filters=h["n_filters"],
        g_frames=h["g_frames"],
        in_channels=h.get("in_channels", 3),
        tau=h.get("tau", 0.1),
        stop_grad_groups=h.get("stop_grad_groups", False),
    )
    return CycleGuardian(cfg, rng, dtype)
