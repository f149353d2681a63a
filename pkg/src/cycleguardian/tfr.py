"""Three-channel log-spectrogram front end.

One shared centered STFT feeds all channels: mel and gammatone weight the
windowed power spectrum, the constant-Q channel applies complex kernels to
the unwindowed frame spectra (Parseval route, certified against the direct
time-domain summation). Channels are log-compressed, stacked, row-normalized.
"""

from dataclasses import dataclass

import numpy as np

N_FFT = 1024
WIN_LEN = 1000
HOP = 128
N_FILTERS = 84
F_MIN = 32.7
F_MAX = 3000.0
LOG_FLOOR_DB = 80.0
_EPS_POWER = 1e-10


@dataclass
class StftFrames:
    """Centered STFT of one cycle. frames is Hann-windowed; raw is the
    unwindowed spectrum of the same frame positions (consumed by the
    constant-Q channel)."""

    frames: np.ndarray
    raw: np.ndarray
    rate: int
    n_fft: int = N_FFT
    win_len: int = WIN_LEN
    hop: int = HOP

    @property
    def n_bins(self):
        return self.frames.shape[0]

    @property
    def n_frames(self):
        return self.frames.shape[1]


def _periodic_hann(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(x, rate, n_fft=N_FFT, win_len=WIN_LEN, hop=HOP):
    """Centered STFT: reflect-pad n_fft/2, Hann window of win_len zero-padded
    to n_fft, frame count floor(len/hop)+1."""
    x = np.asarray(x, dtype=np.float64)
    win = np.zeros(n_fft)
    off = (n_fft - win_len) // 2
    win[off : off + win_len] = _periodic_hann(win_len)
    xp = np.pad(x, n_fft // 2, mode="reflect")
    segs = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop]
    frames = np.fft.rfft(segs * win, axis=1).T
    raw = np.fft.rfft(segs, axis=1).T
    return StftFrames(frames=frames, raw=raw, rate=rate, n_fft=n_fft, win_len=win_len, hop=hop)


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be nonnegative")
    return 2595.0 * np.log10(1.0 + f / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def erb_number(f):
    """ERB-number scale position of frequency f."""
    return 21.4 * np.log10(1.0 + 4.37 * np.asarray(f, dtype=np.float64) / 1000.0)


def erb_number_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) * 1000.0 / 4.37


def erb_bandwidth(f):
    return 24.7 * (4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


_FB_CACHE = {}


def mel_filterbank(rate, n_fft=N_FFT, n_filters=N_FILTERS, f_min=F_MIN, f_max=F_MAX):
    """Triangular filters, centers uniform on the mel scale over [f_min, f_max]
    inclusive, each triangle peaking at 1. Shape (n_filters, n_fft//2+1)."""
    key = ("mel", rate, n_fft, n_filters, f_min, f_max)
    if key in _FB_CACHE:
        return _FB_CACHE[key]
    mel_lo, mel_hi = hz_to_mel(f_min), hz_to_mel(f_max)
    centers_mel = np.linspace(mel_lo, mel_hi, n_filters)
    delta = (mel_hi - mel_lo) / (n_filters - 1)
    lo = mel_to_hz(centers_mel - delta)
    c = mel_to_hz(centers_mel)
    hi = mel_to_hz(centers_mel + delta)
    f = np.arange(n_fft // 2 + 1) * rate / n_fft
    up = (f[None, :] - lo[:, None]) / (c - lo)[:, None]
    down = (hi[:, None] - f[None, :]) / (hi - c)[:, None]
    fb = np.clip(np.minimum(up, down), 0.0, None)
    fb.flags.writeable = False
    _FB_CACHE[key] = fb
    return fb


def gammatone_filterbank(rate, n_fft=N_FFT, n_filters=N_FILTERS, f_min=F_MIN, f_max=F_MAX):
    """Fourth-order gammatone magnitude responses sampled on FFT bins,
    centers uniform on the ERB-number scale, each row peak-normalized."""
    key = ("gt", rate, n_fft, n_filters, f_min, f_max)
    if key in _FB_CACHE:
        return _FB_CACHE[key]
    e_lo, e_hi = erb_number(f_min), erb_number(f_max)
    fc = erb_number_to_hz(np.linspace(e_lo, e_hi, n_filters))
    b = 1.019 * erb_bandwidth(fc)
    f = np.arange(n_fft // 2 + 1) * rate / n_fft
    resp = (1.0 + ((f[None, :] - fc[:, None]) / b[:, None]) ** 2) ** -2.0
    resp = resp / resp.max(axis=1, keepdims=True)
    resp.flags.writeable = False
    _FB_CACHE[key] = resp
    return resp


def cqt_bins(n_filters=N_FILTERS, f_min=F_MIN, f_max=F_MAX):
    """Geometric center frequencies and their constant-Q bandwidths."""
    r = (f_max / f_min) ** (1.0 / (n_filters - 1))
    fk = f_min * r ** np.arange(n_filters)
    bw = fk * (r - 1.0)
    return fk, bw


def cqt_kernels(rate, n_fft=N_FFT, n_filters=N_FILTERS, f_min=F_MIN, f_max=F_MAX):
    """Full-length FFT of each complex constant-Q kernel, shape (n_filters, n_fft).

    Kernel k is a periodic-Hann-windowed complex exponential at f_k of length
    N_k = min(round(Q * rate / f_k), n_fft), centered in the frame, scaled by
    1/N_k.
    """
    key = ("cqt", rate, n_fft, n_filters, f_min, f_max)
    if key in _FB_CACHE:
        return _FB_CACHE[key]
    fk, bw = cqt_bins(n_filters, f_min, f_max)
    q = fk[0] / bw[0]
    kt = np.zeros((n_filters, n_fft), dtype=np.complex128)
    for k in range(n_filters):
        nk = int(min(round(q * rate / fk[k]), n_fft))
        start = (n_fft - nk) // 2
        n = np.arange(nk)
        kt[k, start : start + nk] = _periodic_hann(nk) / nk * np.exp(2j * np.pi * fk[k] * (start + n) / rate)
    kf = np.fft.fft(kt, axis=1)
    kf.flags.writeable = False
    _FB_CACHE[key] = kf
    return kf


def log_compress(power, floor_db=LOG_FLOOR_DB):
    """10*log10(power + eps), clamped floor_db below the per-array max."""
    db = 10.0 * np.log10(power + _EPS_POWER)
    return np.maximum(db, db.max() - floor_db)


def mel_channel(sf: StftFrames, n_filters=N_FILTERS, f_min=F_MIN, f_max=F_MAX):
    fb = mel_filterbank(sf.rate, sf.n_fft, n_filters, f_min, f_max)
    p = np.abs(sf.frames) ** 2
    return log_compress(fb @ p)


def gammatone_channel(sf: StftFrames, n_filters=N_FILTERS, f_min=F_MIN, f_max=F_MAX):
    fb = gammatone_filterbank(sf.rate, sf.n_fft, n_filters, f_min, f_max)
    p = np.abs(sf.frames) ** 2
    return log_compress(fb @ p)


def cqt_channel(sf: StftFrames, n_filters=N_FILTERS, f_min=F_MIN, f_max=F_MAX):
    """Constant-Q magnitudes from the raw frame spectra: for frame s and
    kernel a, sum_n s[n]*conj(a[n]) = (1/M) sum_f S[f]*conj(A[f])."""
    kf = cqt_kernels(sf.rate, sf.n_fft, n_filters, f_min, f_max)
    full = np.concatenate([sf.raw, np.conj(sf.raw[-2:0:-1])], axis=0)
    x = (np.conj(kf) @ full) / sf.n_fft
    return log_compress(np.abs(x) ** 2)


def stack_channels(s0, s1, s2):
    if not (s0.shape == s1.shape == s2.shape):
        raise ValueError(f"channel shapes differ: {s0.shape} {s1.shape} {s2.shape}")
    return np.stack([s0, s1, s2], axis=0)


def row_normalize(stack, eps=1e-6):
    """Per channel, per row: subtract mean, divide by std + eps."""
    mu = stack.mean(axis=-1, keepdims=True)
    sd = stack.std(axis=-1, keepdims=True)
    return (stack - mu) / (sd + eps)


def sample_mask_band(rng, shape, fraction=0.3):
    """Draw one contiguous band on the time or frequency axis (uniform
    choice) covering round(fraction * axis). Sampled once per batch so every
    sample in the batch is masked identically."""
    axis = "time" if rng.random() < 0.5 else "freq"
    n = shape[-1] if axis == "time" else shape[-2]
    width = int(round(fraction * n))
    start = int(rng.integers(0, n - width + 1))
    return axis, start, width


def apply_mask_band(stack, band):
    axis, start, width = band
    out = stack.copy()
    if axis == "time":
        out[:, :, start : start + width] = 0.0
    else:
        out[:, start : start + width, :] = 0.0
    return out


def spec_mask(stack, rng, fraction=0.3, prob=0.5):
    """With probability prob, zero one contiguous band covering
    round(fraction * axis) of either the time or the frequency axis,
    identically on all channels. The band is drawn even when the gate says
    no-mask so the rng stream stays aligned."""
    gate = rng.random() < prob
    band = sample_mask_band(rng, stack.shape, fraction)
    if not gate:
        return stack
    return apply_mask_band(stack, band)


def vtlp_warp(sf: StftFrames, factor):
    """Piecewise-linear frequency warp of the frame spectra. Content below
    the knee (0.8 * Nyquist) scales by factor; the remainder maps linearly
    onto [factor * knee, Nyquist]. Identity at factor 1."""
    if not (0.8 <= factor <= 1.25):
        raise ValueError(f"vtlp factor {factor} outside [0.8, 1.25]")
    if factor == 1.0:
        return sf
    nyq = sf.rate / 2.0
    knee = 0.8 * nyq
    f_out = np.arange(sf.n_bins) * sf.rate / sf.n_fft
    wk = factor * knee
    src = np.where(
        f_out <= wk,
        f_out / factor,
        knee + (f_out - wk) * (nyq - knee) / max(nyq - wk, 1e-9),
    )
    pos = src * sf.n_fft / sf.rate
    i0 = np.clip(np.floor(pos).astype(int), 0, sf.n_bins - 1)
    i1 = np.clip(i0 + 1, 0, sf.n_bins - 1)
    w = (pos - i0)[:, None]

    def warp(m):
        return m[i0] * (1.0 - w) + m[i1] * w

    return StftFrames(
        frames=warp(sf.frames),
        raw=warp(sf.raw),
        rate=sf.rate,
        n_fft=sf.n_fft,
        win_len=sf.win_len,
        hop=sf.hop,
    )


def compute_stack(audio, rate, vtlp_factor=None, mask_rng=None, n_filters=N_FILTERS, f_min=F_MIN, f_max=F_MAX):
    """Full front end for one aligned cycle: STFT, optional VTLP, the three
    filterbank channels, log compression, stacking, row normalization, and
    optional masking (training only)."""
    sf = stft(audio, rate)
    if vtlp_factor is not None and vtlp_factor != 1.0:
        sf = vtlp_warp(sf, vtlp_factor)
    stack = stack_channels(
        mel_channel(sf, n_filters, f_min, f_max),
        gammatone_channel(sf, n_filters, f_min, f_max),
        cqt_channel(sf, n_filters, f_min, f_max),
    )
    stack = row_normalize(stack)
    if mask_rng is not None:
        stack = spec_mask(stack, mask_rng)
    return stack
