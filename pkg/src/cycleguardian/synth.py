"""Synthetic 4-class respiratory-cycle generator.

Class signatures mirror the acoustic structure of the real categories:
sustained narrowband tone bursts for wheeze, millisecond click trains for
crackle, both together for the combined class, and band-limited breath noise
for normal. Used by the end-to-end tests and by `prepare --synthetic`.
"""

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .corpus import KNOWN_DEVICES, LABELS


def _bandpass_noise(rng, n, rate, lo, hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < lo) | (f > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / max(np.sqrt(np.mean(x**2)), 1e-12)


def _breath_envelope(rng, n, rate):
    f = rng.uniform(0.2, 0.45)
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(n) / rate
    return 0.35 + 0.65 * np.abs(np.sin(np.pi * f * t + phase))


def _tone_bursts(rng, n, rate, freq):
    x = np.zeros(n)
    for _ in range(int(rng.integers(2, 5))):
        dur = int(rng.uniform(0.5, 1.5) * rate)
        start = int(rng.integers(0, max(n - dur, 1)))
        t = np.arange(dur) / rate
        burst = np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
        edge = max(int(0.02 * rate), 1)
        ramp = np.ones(dur)
        ramp[:edge] = np.linspace(0, 1, edge)
        ramp[-edge:] = np.linspace(1, 0, edge)
        x[start : start + dur] += burst * ramp
    return x


def _click_train(rng, n, rate):
    x = np.zeros(n)
    for _ in range(int(rng.integers(15, 40))):
        dur = int(rng.uniform(0.005, 0.015) * rate)
        start = int(rng.integers(0, max(n - dur, 1)))
        f = rng.uniform(350.0, 650.0)
        t = np.arange(dur) / rate
        click = np.sin(2 * np.pi * f * t) * np.exp(-t / (dur / rate / 3.0))
        x[start : start + dur] += rng.choice((-1.0, 1.0)) * rng.uniform(0.8, 1.6) * click
    return x


def synth_cycle(label, rng, rate=10000, dur_s=None):
    """One labeled cycle; duration defaults to a draw in [3, 9] s so both the
    truncation and the self-concat alignment paths get exercised."""
    if dur_s is None:
        dur_s = float(rng.uniform(3.0, 9.0))
    n = int(dur_s * rate)
    floor = 0.03 * _bandpass_noise(rng, n, rate, 80.0, 1500.0)
    if label == "normal":
        x = 0.12 * _bandpass_noise(rng, n, rate, 100.0, 1200.0) * _breath_envelope(rng, n, rate)
    elif label == "wheeze":
        x = 0.15 * _tone_bursts(rng, n, rate, 400.0) + floor
    elif label == "crackle":
        x = 0.15 * _click_train(rng, n, rate) + floor
    elif label == "both":
        x = 0.12 * _tone_bursts(rng, n, rate, 400.0) + 0.12 * _click_train(rng, n, rate) + floor
    else:
        raise ValueError(f"unknown label {label!r}")
    return x + 0.005 * rng.standard_normal(n)


def make_dataset(n=200, seed=0, rate=10000):
    """In-memory dataset: (audio list, label-index array). Labels cycle
    through the four classes so counts stay balanced."""
    rng = np.random.default_rng(seed)
    audio, labels = [], []
    for i in range(n):
        lab = LABELS[i % 4]
        audio.append(synth_cycle(lab, rng, rate))
        labels.append(LABELS.index(lab))
    return audio, np.array(labels)


def write_synthetic_corpus(out_dir, n=200, seed=0, rate=10000):
    """ICBHI-format tree: one recording per cycle, stems
    patient_recidx_location_mode_device, 4-column annotation files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        lab = LABELS[i % 4]
        x = synth_cycle(lab, rng, rate)
        patient = 900 + i // 4
        device = KNOWN_DEVICES[(i // 4) % len(KNOWN_DEVICES)]
        stem = f"{patient}_1b{i % 4 + 1}_Al_sc_{device}"
        wavfile.write(out / f"{stem}.wav", rate, (np.clip(x, -1, 1) * 32767).astype(np.int16))
        cr = lab in ("crackle", "both")
        wh = lab in ("wheeze", "both")
        with open(out / f"{stem}.txt", "w") as f:
            f.write(f"0.000\t{x.size / rate:.3f}\t{int(cr)}\t{int(wh)}\n")
    return out
