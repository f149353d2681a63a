"""Command-line surface: prepare, train, eval, infer, ablate, model-info.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Artifact-producing commands drop a manifest.json (effective config, seed,
version, regime, timings) so a run is reproducible from its manifest alone.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from . import corpus as corpus_mod
from . import metrics, synth
from . import train as train_mod
from .config import ConfigError
from .corpus import CorpusError
from .model import CLASS_NAMES, CycleGuardian, ModelConfig
from .nn.checkpoint import CheckpointError, load_checkpoint
from .train import NumericFailure, TWO_CLASS_LABELS

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse's default error path exits with status 2, which this tool
    # reserves for data errors
    def error(self, message):
        raise UsageError(message)


def _collect_overrides(extra):
    """Turn leftover `--section.key value` / `--section.key=value` tokens into
    an override dict; anything else is a usage error."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        head = tok.split("=", 1)[0]
        if not (tok.startswith("--") and "." in head):
            raise UsageError(f"unrecognized argument: {tok}")
        if "=" in tok:
            key, raw = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {tok}")
            key, raw = tok[2:], extra[i + 1]
            i += 2
        out[key] = raw
    return out


def _config_from(args, extra, shortcut_map=()):
    overrides = _collect_overrides(extra)
    for attr, key in shortcut_map:
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = str(val)
    return config_mod.build_config(getattr(args, "config", None), overrides)


def _write_manifest(out_dir, command, cfg, started, **extra):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = {
        "command": command,
        "version": __version__,
        "config": config_mod.jsonable(cfg) if cfg else None,
        "seed": cfg["train.seed"] if cfg else None,
        "out_dir": str(out),
        "timings": {"started_unix": round(started, 3), "elapsed_s": round(time.time() - started, 3)},
    }
    man.update(extra)
    with open(out / "manifest.json", "w") as f:
        json.dump(man, f, indent=2, sort_keys=True)
        f.write("\n")
    return man


def _model_config_from(cfg, task):
    return ModelConfig(
        widths=tuple(cfg["model.widths"]),
        d_g=cfg["model.d_g"],
        d_e=cfg["model.d_e"],
        d_z=cfg["model.d_z"],
        k=cfg["cluster.k"],
        alpha_dof=cfg["cluster.alpha_dof"],
        sim_mode=cfg["cluster.sim_mode"],
        n_classes=2 if task == "two_class" else 4,
        n_filters=cfg["tfr.n_filters"],
        g_frames=cfg["group.frames"],
        tau=cfg["mix.tau"],
        stop_grad_groups=cfg["cluster.stop_grad_groups"],
    )


def _split_from_args(cycles, args, seed):
    split_list = None
    if args.regime == "official_60_40":
        if not args.split_file:
            raise CorpusError("official_60_40 needs --split-file")
        split_list = corpus_mod.load_split_list(args.split_file)
    return corpus_mod.make_split(
        cycles,
        args.regime,
        seed=seed,
        fold=args.fold_index,
        n_folds=args.folds,
        device=args.device,
        split_list=split_list,
    )


def _partition(cycles, spec):
    by_id = {c.cycle_id: c for c in cycles}
    missing = [cid for cid in spec.assignment if cid not in by_id]
    if missing:
        raise CorpusError(f"split names cycles absent from corpus: {missing[:5]}")
    train = [by_id[cid] for cid in sorted(spec.train_ids)]
    valid = [by_id[cid] for cid in sorted(spec.valid_ids)]
    return train, valid


def _load_prepared(prepared):
    prep = Path(prepared)
    man_path = prep / "manifest.json"
    if not man_path.exists():
        raise CorpusError(f"{prepared}: no manifest.json (run prepare first)")
    with open(man_path) as f:
        man = json.load(f)
    data_dir = man.get("data_dir")
    if not data_dir or not Path(data_dir).is_dir():
        raise CorpusError(f"{prepared}: manifest's data_dir {data_dir!r} is not a directory")
    cycles, summary = corpus_mod.build_corpus(data_dir)
    spec = corpus_mod.SplitSpec.load(prep / "split.tsv")
    return cycles, summary, spec


# -- commands -----------------------------------------------------------------
def cmd_prepare(args, extra):
    started = time.time()
    cfg = _config_from(args, extra, [("seed", "train.seed")])
    seed = int(cfg["train.seed"])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.synthetic is not None:
        if args.data_dir:
            raise UsageError("--synthetic and --data-dir are mutually exclusive")
        data_dir = out / "corpus"
        synth.write_synthetic_corpus(data_dir, n=args.synthetic, seed=seed)
    elif args.data_dir:
        data_dir = Path(args.data_dir)
    else:
        raise UsageError("prepare needs --data-dir or --synthetic N")
    cycles, summary = corpus_mod.build_corpus(data_dir)
    corpus_mod.write_manifest(cycles, out / "corpus_manifest.jsonl")
    spec = _split_from_args(cycles, args, seed)
    spec.save(out / "split.tsv")
    n_train, n_valid = len(spec.train_ids), len(spec.valid_ids)
    _write_manifest(
        out,
        "prepare",
        cfg,
        started,
        data_dir=str(data_dir),
        regime=spec.regime,
        cycles=summary,
        split_sizes={"train": n_train, "valid": n_valid},
    )
    print(f"{summary['total']} cycles ({json.dumps(summary)})")
    print(f"split {spec.regime}: {n_train} train / {n_valid} valid")
    print(f"wrote {out / 'corpus_manifest.jsonl'} and {out / 'split.tsv'}")
    return EXIT_OK


def _datasets_for(args, extra, shortcuts):
    cfg = _config_from(args, extra, shortcuts)
    if args.prepared:
        cycles, _, spec = _load_prepared(args.prepared)
    elif args.data_dir:
        cycles, _ = corpus_mod.build_corpus(args.data_dir)
        spec = _split_from_args(cycles, args, int(cfg["train.seed"]))
    else:
        raise UsageError("need --prepared DIR or --data-dir DIR")
    train_recs, valid_recs = _partition(cycles, spec)
    if not train_recs or not valid_recs:
        raise CorpusError(f"degenerate split: {len(train_recs)} train / {len(valid_recs)} valid")
    seed = int(cfg["train.seed"])
    train_data = train_mod.aligned_from_records(train_recs, seed=seed)
    valid_data = train_mod.aligned_from_records(valid_recs, seed=seed + 1)
    return cfg, spec, train_data, valid_data


_TRAIN_SHORTCUTS = [
    ("epochs", "train.epochs"),
    ("batch", "train.batch"),
    ("task", "train.task"),
    ("seed", "train.seed"),
]


def cmd_train(args, extra):
    started = time.time()
    cfg, spec, train_data, valid_data = _datasets_for(args, extra, _TRAIN_SHORTCUTS)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg["train.seed"]), 0x0DE1]))
    model = CycleGuardian(_model_config_from(cfg, cfg["train.task"]), rng)
    trainer = train_mod.Trainer(model, cfg, train_data, valid_data, args.out_dir)
    history = trainer.fit()
    best = max((h["Score"] for h in history if np.isfinite(h["Score"])), default=float("nan"))
    _write_manifest(
        args.out_dir,
        "train",
        cfg,
        started,
        regime=spec.regime,
        epochs_run=len(history),
        best_score=None if not np.isfinite(best) else best,
        train_cycles=len(train_data),
        valid_cycles=len(valid_data),
    )
    print(f"trained {len(history)} epochs; best validation Score {best:.4f}")
    print(f"checkpoints and training_log.csv in {args.out_dir}")
    return EXIT_OK


def cmd_eval(args, extra):
    started = time.time()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.predictions:
        cm = metrics.confusion_from_predictions(args.predictions)
        cfg = None
    elif args.checkpoint:
        model, meta = train_mod.load_model(args.checkpoint)
        task = meta.get("task", "four_class")
        cfg = _config_from(args, extra, [("task", "train.task")])
        cfg["train.task"] = task if args.task is None else args.task
        cfg["group.frames"] = model.cfg.g_frames
        cfg["tfr.n_filters"] = model.cfg.n_filters
        if args.prepared:
            cycles, _, spec = _load_prepared(args.prepared)
            recs = dict(zip(("train", "valid"), _partition(cycles, spec)))[args.subset]
        elif args.data_dir:
            cycles, _ = corpus_mod.build_corpus(args.data_dir)
            recs = cycles
        else:
            raise UsageError("eval needs --prepared/--data-dir with --checkpoint, or --predictions")
        data = train_mod.aligned_from_records(recs, seed=int(cfg["train.seed"]))
        cm, _, rows = train_mod.evaluate_model(model, data, cfg)
        names = TWO_CLASS_LABELS if cfg["train.task"] == "two_class" else CLASS_NAMES
        metrics.write_predictions(out / "predictions.csv", rows, names)
    else:
        raise UsageError("eval needs --checkpoint or --predictions")
    metrics.write_report(out, cm)
    sp, se, score = metrics.icbhi_score(cm)
    _write_manifest(out, "eval", cfg, started, sp=sp, se=se, score=score)
    print(f"Sp {sp:.4f}  Se {se:.4f}  Score {score:.4f}")
    print(f"report.json, confusion.csv, confusion.txt in {out}")
    return EXIT_OK


def _wav_inputs(inputs):
    paths = []
    for raw in inputs:
        p = Path(raw)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.wav")))
        elif p.exists():
            paths.append(p)
        else:
            raise CorpusError(f"{raw}: no such file or directory")
    if not paths:
        raise CorpusError("no wav inputs found")
    return paths


def cmd_infer(args, extra):
    if extra:
        raise UsageError(f"unrecognized argument: {extra[0]}")
    model, meta = train_mod.load_model(args.checkpoint)
    names = TWO_CLASS_LABELS if meta.get("task") == "two_class" else CLASS_NAMES
    paths = _wav_inputs(args.inputs)
    writer_target = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(writer_target)
        w.writerow(["id", "pred"] + [f"p_{n}" for n in names])
        for p in paths:
            rate, x = corpus_mod.read_wav(p)
            probs = train_mod.infer_audio(model, x, rate)
            w.writerow([p.name, names[int(np.argmax(probs))]] + [f"{v:.6f}" for v in probs])
    finally:
        if args.out:
            writer_target.close()
    if args.out:
        print(f"wrote {len(paths)} prediction(s) to {args.out}")
    return EXIT_OK


_MODULE_AXIS = [
    ("base_dec", {"train.use_contrastive": False, "train.gamma_w": 0.0}),
    ("idec", {"train.use_contrastive": False, "cluster.sim_mode": "identity"}),
    ("gcl", {"train.use_contrastive": True, "train.gamma_w": 0.0}),
    ("idec_gcl_cos", {"train.use_contrastive": True, "cluster.sim_mode": "identity"}),
    ("idec_gcl_soft_cos", {}),
]

_AUGMENT_AXIS = [
    ("none", {"augment.enabled": False}),
    ("audio", {"augment.enabled": True, "augment.audio": True, "augment.mask": False}),
    ("spec", {"augment.enabled": True, "augment.audio": False, "augment.mask": True}),
    ("audio_spec", {"augment.enabled": True}),
]

_NOISE_AXIS = [
    ("no_noise", {"augment.enabled": True, "augment.noise": False}),
    ("with_noise", {"augment.enabled": True, "augment.noise": True}),
]


def _ablation_grid(args):
    if args.axis == "module":
        return _MODULE_AXIS
    if args.axis == "augmentation":
        return _AUGMENT_AXIS
    if args.axis == "noise":
        return _NOISE_AXIS
    # group_frames: stride tracks G to keep a 5-frame overlap
    gs = [int(g) for g in args.g_list.split(",") if g.strip()]
    bad = [g for g in gs if g < 2]
    if bad:
        raise UsageError(f"group frames must be >= 2, got {bad}")
    return [
        (f"g{g}", {"group.frames": g, "group.stride": max(g - 5, 1)})
        for g in gs
    ]


def cmd_ablate(args, extra):
    started = time.time()
    grid = _ablation_grid(args)
    if not grid:
        raise UsageError("no configurations")
    cfg0, spec, train_data, valid_data = _datasets_for(args, extra, _TRAIN_SHORTCUTS)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for name, delta in grid:
        cfg = dict(cfg0)
        cfg.update(delta)
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg["train.seed"]), 0x0DE1]))
        model = CycleGuardian(_model_config_from(cfg, cfg["train.task"]), rng)
        trainer = train_mod.Trainer(model, cfg, train_data, valid_data, out / name, log=None)
        history = trainer.fit()
        finite = [h for h in history if np.isfinite(h["Score"])]
        best = max(finite, key=lambda h: h["Score"]) if finite else {"Sp": float("nan"), "Se": float("nan"), "Score": float("nan"), "epoch": -1}
        results.append((name, best))
        print(f"{name}: Sp {best['Sp']:.4f} Se {best['Se']:.4f} Score {best['Score']:.4f} (epoch {best['epoch']})")
    with open(out / "ablation.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["axis", "name", "sp", "se", "score", "best_epoch"])
        for name, best in results:
            w.writerow([args.axis, name, f"{best['Sp']:.6f}", f"{best['Se']:.6f}", f"{best['Score']:.6f}", best["epoch"]])
    _write_manifest(out, "ablate", cfg0, started, regime=spec.regime, axis=args.axis, rows=[n for n, _ in grid])
    print(f"wrote {out / 'ablation.csv'}")
    return EXIT_OK


def cmd_model_info(args, extra):
    if extra:
        raise UsageError(f"unrecognized argument: {extra[0]}")
    state, meta = load_checkpoint(args.checkpoint)
    n_values = int(sum(int(np.asarray(v).size) for v in state.values()))
    info = {
        "checkpoint": str(args.checkpoint),
        "meta": meta,
        "tensors": len(state),
        "values": n_values,
    }
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


# -- wiring -----------------------------------------------------------------
def build_parser():
    parser = _Parser(prog="cycleguardian", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add_split_flags(p):
        p.add_argument("--regime", default="ratio_80_20",
                       choices=["official_60_40", "ratio_80_20", "patient_fold", "device_holdout"])
        p.add_argument("--split-file", help="official stem->side list")
        p.add_argument("--folds", type=int, default=5)
        p.add_argument("--fold-index", type=int, default=0)
        p.add_argument("--device", help="held-out device name")

    def add_data_flags(p):
        p.add_argument("--prepared", help="directory produced by prepare")
        p.add_argument("--data-dir", help="corpus directory (wav + annotation pairs)")
        add_split_flags(p)

    p = sub.add_parser("prepare", help="scan a corpus, build manifest and split files")
    p.add_argument("--data-dir")
    p.add_argument("--synthetic", type=int, metavar="N", help="generate an N-sample synthetic corpus instead")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    add_split_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model and write checkpoints")
    add_data_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--task", choices=["four_class", "two_class"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a predictions file")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="existing predictions CSV to rescore")
    add_data_flags(p)
    p.add_argument("--subset", default="valid", choices=["train", "valid"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--task", choices=["four_class", "two_class"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify wav files with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("inputs", nargs="+", help="wav files or directories")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="run an ablation axis and tabulate scores")
    add_data_flags(p)
    p.add_argument("--axis", required=True, choices=["augmentation", "module", "group_frames", "noise"])
    p.add_argument("--g-list", default="5,10,15,20,25", help="group-frame counts for the group_frames axis")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--task", choices=["four_class", "two_class"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("model-info", help="describe a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_model_info)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args, extra)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
