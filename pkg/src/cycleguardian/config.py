"""Flat dotted-key configuration: declared defaults, optional key=value file,
command-line overrides. Every key is typed by its default."""

DEFAULTS = {
    # augmentation (audio domain + spectrogram mask)
    "augment.enabled": True,
    "augment.prob": 0.5,
    "augment.noise_snr_db_range": (15.0, 30.0),
    "augment.shift_s_max": 1.0,
    "augment.stretch_range": (0.9, 1.1),
    "augment.vtlp_range": (0.9, 1.1),
    "augment.mask": True,
    # component gates used by the ablation harness: audio-level transforms as
    # a block, and the additive-noise transform on its own
    "augment.audio": True,
    "augment.noise": True,
    # spectrogram front end
    "tfr.n_fft": 1024,
    "tfr.win_len": 1000,
    "tfr.hop": 128,
    "tfr.f_min": 32.7,
    "tfr.f_max": 3000.0,
    "tfr.n_filters": 84,
    "tfr.log_floor_db": 80.0,
    # grouping
    "group.frames": 20,
    "group.stride": 15,
    # model dims
    "model.widths": (16, 32, 64),
    "model.d_g": 128,
    "model.d_e": 32,
    "model.d_z": 128,
    # clustering
    "cluster.k": 5,
    "cluster.alpha_dof": 1.0,
    "cluster.sim_mode": "learned",
    "cluster.p_update_interval": 1,
    "cluster.warmup_epochs": 0,
    "cluster.stop_grad_groups": False,
    # mixing / contrastive
    "mix.beta_a": 2.0,
    "mix.beta_b": 2.0,
    "mix.tau": 0.1,
    "mix.per_sample_lambda": False,
    # training
    "train.epochs": 600,
    "train.batch": 16,
    "train.lr0": 0.01,
    "train.lr_decay": 0.33,
    "train.lr_step": 150,
    "train.alpha_w": 0.1,
    "train.gamma_w": 0.01,
    "train.seed": 0,
    "train.task": "four_class",
    "train.class_weights": False,
    "train.deterministic": True,
    # module toggle for the ablation harness: with the contrastive branch off
    # the trainer runs the single (unmixed) branch and logs L_con = 0
    "train.use_contrastive": True,
}


class ConfigError(Exception):
    pass


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_value(key, raw):
    """Interpret a raw string according to the default's type."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
            elem = type(default[0])
            return tuple(elem(p) for p in parts)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None


def load_config_file(path):
    """key = value lines; '#' starts a comment; blank lines ignored."""
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, raw = line.split("=", 1)
            out[key.strip()] = parse_value(key.strip(), raw)
    return out


def build_config(file=None, overrides=None):
    """defaults <- file <- overrides; overrides is a dict of raw strings."""
    cfg = dict(DEFAULTS)
    if file:
        cfg.update(load_config_file(file))
    for key, raw in (overrides or {}).items():
        cfg[key] = parse_value(key, raw)
    return cfg


def config_to_text(cfg):
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def jsonable(cfg):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}
