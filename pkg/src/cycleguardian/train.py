"""Joint training loop: batch assembly with batch-identical augmentation,
the four-term objective, the stepped learning-rate schedule, per-epoch
validation scoring, CSV logging, and checkpointing."""

import csv
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio as audio_mod
from . import clustering, grouping, metrics, mixing, tfr
from .corpus import LABELS, cycle_audio
from .model import CycleGuardian, model_from_hyperparams
from .nn import tensor as T
from .nn.optim import Adam
from .nn.checkpoint import save_checkpoint, load_checkpoint

TWO_CLASS_LABELS = ("normal", "abnormal")


class NumericFailure(RuntimeError):
    """A loss term left the finite range; carries the offending term name."""

    def __init__(self, term, value):
        super().__init__(f"non-finite loss term {term}: {value}")
        self.term = term


def lr_at(epoch, lr0=0.01, decay=0.33, step=150):
    return lr0 * decay ** (epoch // step)


def classification_loss(logits, labels, class_weights=None):
    """Mean cross-entropy after softmax; optional per-class weights."""
    b, c = logits.shape
    labels = np.asarray(labels)
    lsm = T.log_softmax(logits, axis=1)
    picked = T.gather_rows(T.reshape(lsm, (-1,)), labels + np.arange(b) * c)
    if class_weights is None:
        return T.mul(T.tsum(picked), -1.0 / b)
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    return T.mul(T.tsum(T.mul(picked, w)), -1.0 / max(w.sum(), 1e-12))


def total_loss(l_con, l_clu, l_cos, l_cls, alpha_w, gamma_w):
    return T.add(T.add(l_con, T.mul(l_clu, alpha_w)), T.add(T.mul(l_cos, gamma_w), l_cls))


@dataclass
class TrainData:
    """Aligned cycles living in memory: parallel id/label/audio lists."""

    ids: list
    labels: np.ndarray
    audio: list

    def __len__(self):
        return len(self.ids)

    def subset(self, idx):
        return TrainData(
            ids=[self.ids[i] for i in idx],
            labels=self.labels[np.asarray(idx)],
            audio=[self.audio[i] for i in idx],
        )


def _cache_path(kind, key):
    root = os.environ.get("CG_CACHE_DIR")
    if not root:
        return None
    d = Path(root) / kind
    d.mkdir(parents=True, exist_ok=True)
    safe = hashlib.sha1(key.encode()).hexdigest()[:20]
    return d / f"{safe}.npy"


def aligned_from_records(records, seed=0):
    """Load, resample, and 8 s-align corpus cycles; honors CG_CACHE_DIR."""
    ids, labels, audio = [], [], []
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x41]))
    for rec in records:
        path = _cache_path("aligned", rec.cycle_id)
        if path is not None and path.exists():
            x = np.load(path)
        else:
            rate, raw = cycle_audio(rec)
            x = raw if rate == audio_mod.RATE else audio_mod.resample(raw, rate, audio_mod.RATE)
            x = audio_mod.align_length(x, rng)
            if path is not None:
                np.save(path, x)
        ids.append(rec.cycle_id)
        labels.append(LABELS.index(rec.label))
        audio.append(x)
    return TrainData(ids=ids, labels=np.array(labels), audio=audio)


def aligned_from_arrays(arrays, labels, rate=audio_mod.RATE, seed=0, ids=None):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x42]))
    out = []
    for x in arrays:
        y = x if rate == audio_mod.RATE else audio_mod.resample(x, rate, audio_mod.RATE)
        out.append(audio_mod.align_length(y, rng))
    ids = ids or [f"synth#{i}" for i in range(len(out))]
    return TrainData(ids=ids, labels=np.asarray(labels), audio=out)


def map_two_class(labels):
    return (np.asarray(labels) > 0).astype(np.int64)


def stack_for(x, cfg, vtlp_factor=None, band=None):
    stack = tfr.compute_stack(
        x,
        audio_mod.RATE,
        vtlp_factor=vtlp_factor,
        n_filters=cfg["tfr.n_filters"],
        f_min=cfg["tfr.f_min"],
        f_max=cfg["tfr.f_max"],
    )
    if band is not None:
        stack = tfr.apply_mask_band(stack, band)
    return stack


def group_features(data: TrainData, cfg, plan):
    """Augmentation-free group features (B, N_g, C, F, G) float32; per-cycle
    results land in CG_CACHE_DIR when set."""
    key_cfg = json.dumps({k: cfg[k] for k in sorted(cfg) if k.startswith(("tfr.", "group."))})
    feats = []
    for cid, x in zip(data.ids, data.audio):
        path = _cache_path("stacks", f"{cid}|{key_cfg}")
        if path is not None and path.exists():
            g = np.load(path)
        else:
            g = np.stack(grouping.slice_groups(stack_for(x, cfg), plan), axis=0).astype(np.float32)
            if path is not None:
                np.save(path, g)
        feats.append(g)
    return np.stack(feats, axis=0)


def evaluate_model(model, data: TrainData, cfg, plan=None, feats=None, chunk=16):
    """Eval-mode pass over a dataset: confusion matrix, (Sp, Se, Score), and
    prediction rows (id, true, pred, probs)."""
    two_class = cfg["train.task"] == "two_class"
    names = TWO_CLASS_LABELS if two_class else LABELS
    if feats is None:
        if plan is None:
            t_frames = 80000 // cfg["tfr.hop"] + 1
            plan = grouping.plan_groups(t_frames, cfg["group.frames"], cfg["group.stride"])
        feats = group_features(data, cfg, plan)
    labels = map_two_class(data.labels) if two_class else data.labels
    was_training = model.training
    model.eval()
    probs_all = []
    with T.no_grad():
        for s in range(0, feats.shape[0], chunk):
            probs_all.append(model.predict_proba(feats[s : s + chunk]))
    probs_all = np.concatenate(probs_all, axis=0)
    pred_idx = probs_all.argmax(axis=1)
    cm = metrics.ConfusionMatrix.from_predictions(labels, pred_idx, names)
    rows = [
        (cid, names[t], names[p], probs_all[i])
        for i, (cid, t, p) in enumerate(zip(data.ids, labels, pred_idx))
    ]
    if was_training:
        model.train()
    return cm, metrics.icbhi_score(cm), rows


class Trainer:
    def __init__(self, model: CycleGuardian, cfg, train_data: TrainData, valid_data: TrainData, out_dir, log=print):
        self.model = model
        self.cfg = cfg
        self.train_data = train_data
        self.valid_data = valid_data
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log = log or (lambda *_: None)
        ss = np.random.SeedSequence([int(cfg["train.seed"]), 0xC1C1])
        self.order_rng, self.aug_rng, self.mix_rng, self.cluster_rng = [
            np.random.default_rng(s) for s in ss.spawn(4)
        ]
        self.two_class = cfg["train.task"] == "two_class"
        self.plan = grouping.plan_groups(self._t_frames(), cfg["group.frames"], cfg["group.stride"])
        self.opt = Adam(model.parameters(), lr=cfg["train.lr0"])
        self.history = []
        self._feat_cache = {}
        self._p_cache = {}
        self._step = 0
        self.class_weights = None
        if cfg["train.class_weights"]:
            y = self._labels(train_data)
            counts = np.bincount(y, minlength=model.cfg.n_classes).astype(np.float64)
            w = counts.sum() / np.maximum(counts, 1.0)
            self.class_weights = w / w.mean()

    def _labels(self, data):
        return map_two_class(data.labels) if self.two_class else data.labels

    def _t_frames(self):
        return 80000 // self.cfg["tfr.hop"] + 1

    # -- features ------------------------------------------------------------
    def _groups_of(self, stack):
        return np.stack(grouping.slice_groups(stack, self.plan), axis=0)

    def _clean_features(self, data, tag):
        """Augmentation-free group features for one dataset, computed once."""
        if tag not in self._feat_cache:
            self._feat_cache[tag] = group_features(data, self.cfg, self.plan)
        return self._feat_cache[tag]

    def _augmented_batch(self, data, idx):
        """Batch features under one shared augmentation plan."""
        plan = audio_mod.sample_augment_plan(self.aug_rng, self.cfg)
        band = None
        if self.cfg["augment.mask"]:
            # gate and band are always drawn so the stream stays aligned
            gate = self.aug_rng.random() < self.cfg["augment.prob"]
            shape = (3, self.cfg["tfr.n_filters"], self._t_frames())
            drawn = tfr.sample_mask_band(self.aug_rng, shape)
            band = drawn if gate else None
        vtlp = plan.vtlp_factor if plan.vtlp else None
        out = []
        for i in idx:
            y, _ = audio_mod.augment_audio(data.audio[i], plan, self.aug_rng)
            out.append(self._groups_of(stack_for(y, self.cfg, vtlp_factor=vtlp, band=band)))
        return np.stack(out, axis=0).astype(np.float32)

    # -- cluster state ---------------------------------------------------------
    def warmup_reducer(self):
        epochs = int(self.cfg["cluster.warmup_epochs"])
        if epochs <= 0:
            return
        feats = self._clean_features(self.train_data, "train")
        b, n_g = feats.shape[0], feats.shape[1]
        params = self.model.reducer.parameters()
        opt = Adam(params, lr=1e-3)
        self.model.train()
        for _ in range(epochs):
            order = self.order_rng.permutation(b)
            for s in range(0, b, int(self.cfg["train.batch"])):
                idx = order[s : s + int(self.cfg["train.batch"])]
                if idx.size == 0:
                    continue
                with T.no_grad():
                    g = self.model.encode_groups(feats[idx])
                flat = T.Tensor(g.data.reshape(-1, self.model.cfg.d_g), requires_grad=False)
                rec = self.model.reducer.reconstruct(flat)
                diff = T.sub(rec, flat.data)
                loss = T.tmean(T.mul(diff, diff))
                opt.zero_grad()
                loss.backward()
                opt.step()

    def init_clusters(self, max_groups=2048):
        """k-means++ on reduced embeddings of clean training features."""
        feats = self._clean_features(self.train_data, "train")
        flat = feats.reshape(-1, *feats.shape[2:])
        if flat.shape[0] > max_groups:
            pick = self.cluster_rng.choice(flat.shape[0], size=max_groups, replace=False)
            flat = flat[pick]
        self.model.eval()
        with T.no_grad():
            # encode_groups expects (B, N_g, ...); feed the sampled groups singly
            g = self.model.encode_groups(flat[:, None])
            emb = self.model.reducer(T.Tensor(g.data.reshape(-1, self.model.cfg.d_g))).data
        mu = clustering.init_centroids(np.asarray(emb, dtype=np.float64), self.model.cfg.k, self.cluster_rng)
        self.model.set_centroids(mu)
        self.model.train()

    # -- losses ------------------------------------------------------------
    def _target_for(self, ids, q):
        """Sharpened targets, refreshed per sample every p_update_interval
        steps; rows are cached between refreshes."""
        interval = max(int(self.cfg["cluster.p_update_interval"]), 1)
        b = len(ids)
        n_g = self.plan.n_groups
        qd = q.data.reshape(b, n_g, -1)
        rows = []
        stale = [
            i
            for i, cid in enumerate(ids)
            if cid not in self._p_cache or self._step - self._p_cache[cid][0] >= interval
        ]
        if stale:
            sub = qd[stale].reshape(len(stale) * n_g, -1)
            target_rows = clustering.target_distribution(sub).reshape(len(stale), n_g, -1)
        for j, i in enumerate(stale):
            self._p_cache[ids[i]] = (self._step, target_rows[j])
        for i, cid in enumerate(ids):
            rows.append(self._p_cache[cid][1])
        return np.concatenate(rows, axis=0)

    def step(self, feats, labels, ids):
        """One optimization step over an assembled feature batch."""
        model = self.model
        cfg = self.cfg
        if cfg["train.use_contrastive"]:
            plan = mixing.sample_mix_plan(
                self.mix_rng,
                feats.shape[0],
                self.plan.n_groups,
                beta_a=cfg["mix.beta_a"],
                beta_b=cfg["mix.beta_b"],
                per_sample=cfg["mix.per_sample_lambda"],
            )
            out = model.dual_branch_forward(feats, plan)
            l_con = mixing.contrastive_loss(out["head_out"], out["z"], plan.donors, plan.lam, cfg["mix.tau"])
        else:
            out = model.forward_single(feats)
            l_con = T.Tensor(np.float64(0.0))
        p_t = self._target_for(ids, out["q"])
        l_clu = clustering.kl_loss(p_t, out["q"])
        l_cos = model.cos_penalty(out["c"], out["nonempty"])
        l_cls = classification_loss(out["logits"], labels, self.class_weights)
        terms = {"L_con": l_con, "L_clu": l_clu, "L_cos": l_cos, "L_cls": l_cls}
        for name, t in terms.items():
            v = float(t.data)
            if not np.isfinite(v):
                raise NumericFailure(name, v)
        loss = total_loss(l_con, l_clu, l_cos, l_cls, cfg["train.alpha_w"], cfg["train.gamma_w"])
        if not np.isfinite(float(loss.data)):
            raise NumericFailure("L_total", float(loss.data))
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        self._step += 1
        return {name: float(t.data) for name, t in terms.items()} | {"L_total": float(loss.data)}

    # -- evaluation ------------------------------------------------------------
    def evaluate(self, data: TrainData, tag, chunk=16):
        """Eval-mode pass: confusion matrix, score triple, prediction rows."""
        feats = self._clean_features(data, tag)
        return evaluate_model(self.model, data, self.cfg, plan=self.plan, feats=feats, chunk=chunk)

    # -- main loop ------------------------------------------------------------
    def fit(self):
        cfg = self.cfg
        epochs = int(cfg["train.epochs"])
        batch = int(cfg["train.batch"])
        augment = bool(cfg["augment.enabled"])
        csv_path = self.out_dir / "training_log.csv"
        best_score = -np.inf
        wrote_best = False
        labels_all = self._labels(self.train_data)
        if not augment:
            self._clean_features(self.train_data, "train")
        if int(cfg["cluster.warmup_epochs"]) > 0:
            self.warmup_reducer()
        self.init_clusters()
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "lr", "L_con", "L_clu", "L_cos", "L_cls", "L_total", "Sp", "Se", "Score"])
            for epoch in range(epochs):
                lr = lr_at(epoch, cfg["train.lr0"], cfg["train.lr_decay"], cfg["train.lr_step"])
                self.opt.lr = lr
                self.model.train()
                order = self.order_rng.permutation(len(self.train_data))
                sums = {}
                nb = 0
                for s in range(0, len(order), batch):
                    idx = order[s : s + batch]
                    if idx.size < 2:
                        continue  # mixing needs a donor
                    if augment:
                        feats = self._augmented_batch(self.train_data, idx)
                    else:
                        feats = self._clean_features(self.train_data, "train")[idx]
                    try:
                        losses = self.step(feats, labels_all[idx], [self.train_data.ids[i] for i in idx])
                    except NumericFailure:
                        self._save(self.out_dir / "final.ckpt", epoch, best_score)
                        raise
                    nb += 1
                    for k, v in losses.items():
                        sums[k] = sums.get(k, 0.0) + v
                means = {k: v / max(nb, 1) for k, v in sums.items()}
                cm, (sp, se, score), _ = self.evaluate(self.valid_data, "valid")
                writer.writerow(
                    [epoch, f"{lr:.8g}"]
                    + [f"{means.get(k, float('nan')):.6f}" for k in ("L_con", "L_clu", "L_cos", "L_cls", "L_total")]
                    + [f"{sp:.6f}", f"{se:.6f}", f"{score:.6f}"]
                )
                f.flush()
                self.history.append({"epoch": epoch, "lr": lr, **means, "Sp": sp, "Se": se, "Score": score})
                if np.isfinite(score) and score > best_score:
                    best_score = score
                    self._save(self.out_dir / "best.ckpt", epoch, score)
                    wrote_best = True
                self.log(
                    f"epoch {epoch}: lr {lr:.5f} total {means.get('L_total', float('nan')):.4f} "
                    f"Sp {sp:.3f} Se {se:.3f} Score {score:.3f}"
                )
        self._save(self.out_dir / "final.ckpt", epochs - 1, best_score)
        if not wrote_best:
            # no epoch produced a finite validation score; keep the last
            # weights under both names so downstream tooling always has a best
            self._save(self.out_dir / "best.ckpt", epochs - 1, best_score)
        return self.history

    def _save(self, path, epoch, score):
        meta = {
            "hyperparams": self.model.hyperparams(),
            "epoch": int(epoch),
            "best_score": None if not np.isfinite(score) else float(score),
            "task": self.cfg["train.task"],
        }
        save_checkpoint(path, self.model.state_dict(), meta)


def load_model(path, dtype=np.float32):
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    state, meta = load_checkpoint(path)
    model = model_from_hyperparams(meta["hyperparams"], np.random.default_rng(0), dtype)
    model.load_state_dict(state)
    model.eval()
    return model, meta


def infer_audio(model, x, rate, cfg=None):
    """Full preprocessing (no augmentation, no masking) then class
    probabilities. Deterministic: padding draws use a fixed stream."""
    cfg = cfg or {}
    y = x if rate == audio_mod.RATE else audio_mod.resample(np.asarray(x, dtype=np.float64), rate, audio_mod.RATE)
    y = audio_mod.align_length(y, np.random.default_rng(0))
    stack = tfr.compute_stack(
        y,
        audio_mod.RATE,
        n_filters=cfg.get("tfr.n_filters", model.cfg.n_filters),
        f_min=cfg.get("tfr.f_min", tfr.F_MIN),
        f_max=cfg.get("tfr.f_max", tfr.F_MAX),
    )
    g = cfg.get("group.frames", model.cfg.g_frames)
    plan = grouping.plan_groups(stack.shape[-1], g, cfg.get("group.stride", max(g - 5, 1)))
    groups = np.stack(grouping.slice_groups(stack, plan), axis=0)[None]
    model.eval()
    return model.predict_proba(groups.astype(np.float32))[0]
