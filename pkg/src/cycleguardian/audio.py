"""Raw-cycle audio conditioning: resampling, 8 s alignment, augmentation.

All cycles end up as exactly 80000 samples at 10 kHz. Augmentation draws one
plan per batch so every sample in a batch gets the same transform set.
"""

from dataclasses import dataclass, field
from math import gcd

import numpy as np

from . import kernels

RATE = 10000
TARGET_S = 8.0
TARGET_SAMPLES = int(RATE * TARGET_S)

_TAPS = 64
_HALF = _TAPS // 2
_KAISER_BETA = 8.0


def _sinc_table(up, down):
    """Polyphase windowed-sinc rows, one per output phase.

    Cutoff sits at min(1, up/down) of the input Nyquist so decimation is
    anti-aliased; each row is sum-normalized for exact DC gain.
    """
    rho = min(1.0, up / down)
    fracs = (np.arange(up) * down % up) / up
    offsets = np.arange(_TAPS) - (_HALF - 1)
    t = offsets[None, :] - fracs[:, None]
    win = np.kaiser(2 * _HALF * 16 + 1, _KAISER_BETA)
    wt = np.interp(t, np.linspace(-_HALF, _HALF, win.size), win, left=0.0, right=0.0)
    table = rho * np.sinc(rho * t) * wt
    table /= table.sum(axis=1, keepdims=True)
    return table


def resample(x, src_rate, dst_rate=RATE):
    """Windowed-sinc rate conversion; output length round(len * dst/src)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot resample empty audio")
    if src_rate <= 0 or dst_rate <= 0:
        raise ValueError("rates must be positive")
    if src_rate == dst_rate:
        return x.copy()
    g = gcd(int(src_rate), int(dst_rate))
    up, down = int(dst_rate) // g, int(src_rate) // g
    out_len = int(round(x.size * dst_rate / src_rate))
    table = _sinc_table(up, down)
    n = np.arange(out_len)
    # center of output sample n in input units: n * down / up
    base = n * down // up
    phase = (n * down % up).astype(np.int64)
    xpad = np.pad(x, (_HALF - 1, _HALF + 1))
    return kernels.resample_apply(np.ascontiguousarray(xpad), base.astype(np.int64), phase, np.ascontiguousarray(table))


def plan_self_concat(rng, n_samples, rate=RATE, target=TARGET_SAMPLES):
    """Crop schedule used to pad short cycles: (start, length) pairs, each a
    contiguous piece of the source at least 0.5 s long (or the whole source).
    Every join overlaps a 10 ms crossfade, so a crop only advances the total
    by length - fade; the schedule budgets for that shrinkage."""
    fade = int(0.010 * rate)
    if n_samples <= fade:
        raise ValueError(f"cycle of {n_samples} samples is shorter than the crossfade")
    min_len = min(n_samples, int(0.5 * rate))
    crops = []
    total = n_samples
    while total < target:
        length = int(rng.integers(min_len, n_samples + 1))
        start = int(rng.integers(0, n_samples - length + 1))
        crops.append((start, length))
        total += length - fade
    return crops


def _crossfade_append(acc, piece, fade):
    k = min(fade, acc.size, piece.size)
    if k > 0:
        w = np.linspace(0.0, 1.0, k)
        seam = acc[-k:] * (1.0 - w) + piece[:k] * w
        return np.concatenate([acc[:-k], seam, piece[k:]])
    return np.concatenate([acc, piece])


def align_length(x, rng, rate=RATE, target_s=TARGET_S):
    """Fix a cycle to exactly target_s seconds: truncate long cycles to the
    initial span, pad short ones by self-concatenating random crops joined
    with a 10 ms linear crossfade."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot align empty audio")
    target = int(round(rate * target_s))
    if x.size >= target:
        return x[:target].copy()
    fade = int(0.010 * rate)
    acc = x.copy()
    for start, length in plan_self_concat(rng, x.size, rate, target):
        acc = _crossfade_append(acc, x[start : start + length], fade)
    return acc[:target]


@dataclass
class AugmentPlan:
    """One batch's augmentation draw. vtlp is only tagged here; the warp
    itself happens in the spectrogram stage."""

    noise: bool = False
    noise_snr_db: float = 20.0
    shift: bool = False
    shift_samples: int = 0
    stretch: bool = False
    stretch_factor: float = 1.0
    vtlp: bool = False
    vtlp_factor: float = 1.0

    def tags(self):
        out = []
        if self.stretch:
            out.append(f"stretch:{self.stretch_factor:.4f}")
        if self.shift:
            out.append(f"shift:{self.shift_samples:+d}")
        if self.noise:
            out.append(f"noise:{self.noise_snr_db:.1f}dB")
        if self.vtlp:
            out.append(f"vtlp:{self.vtlp_factor:.4f}")
        return out


DEFAULT_AUG = {
    "augment.prob": 0.5,
    "augment.noise_snr_db_range": (15.0, 30.0),
    "augment.shift_s_max": 1.0,
    "augment.stretch_range": (0.9, 1.1),
    "augment.vtlp_range": (0.9, 1.1),
    "augment.audio": True,
    "augment.noise": True,
}


def sample_augment_plan(rng, cfg=None):
    """Draw one plan for a batch. Flags and parameters are always drawn in a
    fixed order so the RNG stream stays aligned across configurations; the
    audio/noise toggles (ablation harness) gate flags after the draw."""
    c = dict(DEFAULT_AUG)
    if cfg:
        c.update(cfg)
    p = float(c["augment.prob"])
    flags = rng.random(4) < p
    snr = float(rng.uniform(*c["augment.noise_snr_db_range"]))
    shift = int(rng.integers(-int(c["augment.shift_s_max"] * RATE), int(c["augment.shift_s_max"] * RATE) + 1))
    stretch = float(rng.uniform(*c["augment.stretch_range"]))
    vtlp = float(rng.uniform(*c["augment.vtlp_range"]))
    if not c["augment.audio"]:
        flags[:] = False
    if not c["augment.noise"]:
        flags[0] = False
    return AugmentPlan(
        noise=bool(flags[0]),
        noise_snr_db=snr,
        shift=bool(flags[1]),
        shift_samples=shift,
        stretch=bool(flags[2]),
        stretch_factor=stretch,
        vtlp=bool(flags[3]),
        vtlp_factor=vtlp,
    )


def augment_audio(x, plan, rng, rate=RATE):
    """Apply the audio-domain parts of a plan; returns (audio, tags).

    Order: stretch (resample + re-align), circular shift, additive noise.
    The per-sample noise realization comes from rng; everything else is
    fully determined by the plan.
    """
    y = np.asarray(x, dtype=np.float64)
    if plan.stretch and plan.stretch_factor != 1.0:
        stretched = resample(y, rate, int(round(rate * plan.stretch_factor)))
        y = align_length(stretched, rng, rate)
    if plan.shift and plan.shift_samples != 0:
        y = np.roll(y, plan.shift_samples)
    if plan.noise:
        sig_power = float(np.mean(y * y))
        if sig_power > 0:
            noise_power = sig_power / (10.0 ** (plan.noise_snr_db / 10.0))
            y = y + rng.normal(0.0, np.sqrt(noise_power), size=y.size)
    return y, plan.tags()
