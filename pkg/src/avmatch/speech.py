"""Spectral speech features: log mel filterbank energies and derivatives.

A 0.3-second mono clip becomes a [15, 40, 3] cube: 15 non-overlapping 20 ms
frames, 40 log filterbank energies each, stacked with first and second
temporal derivatives, then standardized over the whole cube. Keeping the
filterbank energies (no final cosine transform) preserves spectral locality;
the cepstral variant is available for baseline comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.fft import dct, idct

from .errors import ConfigError, DataError
from .tensor import Tensor

LOG_ENERGY_FLOOR = 1e-10
STD_EPS = 1e-8


@dataclass
class AudioClip:
    samples: np.ndarray   # mono amplitudes, float64
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError("audio clip must be mono (one sample axis)")
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def window(self, start_s: float, duration_s: float) -> "AudioClip":
        lo = int(round(start_s * self.sample_rate))
        hi = lo + int(round(duration_s * self.sample_rate))
        if lo < 0 or hi > len(self.samples):
            raise DataError(f"window [{start_s}, {start_s + duration_s}] s outside clip "
                            f"of {self.duration_s:.3f} s")
        return AudioClip(self.samples[lo:hi], self.sample_rate)


@dataclass
class SpeechConfig:
    sample_rate: int = 16000
    window_ms: float = 20.0
    overlap: float = 0.0          # fraction of a window
    n_filters: int = 40
    fft_size: int = 512
    f_low: float = 0.0
    f_high: float | None = None   # defaults to sample_rate / 2
    window_fn: str = "hamming"    # or "rect"
    delta_window: int = 2
    n_coeffs: int = 13            # cepstral variant only

    def resolved_f_high(self, rate: int) -> float:
        return self.f_high if self.f_high is not None else rate / 2.0


@dataclass
class SpeechCube:
    values: Tensor                # [T, n_filters, 3]
    clip_id: str = ""
    start_s: float = 0.0


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(clip: AudioClip, window_ms: float = 20.0, overlap: float = 0.0) -> np.ndarray:
    """Slice the clip into frames of window_ms, dropping the trailing remainder.

    With overlap 0 the frames are disjoint and the frame count is
    floor(duration / window).
    """
    if not 0.0 <= overlap < 1.0:
        raise ConfigError(f"overlap must be in [0, 1), got {overlap}")
    win = int(round(window_ms * 1e-3 * clip.sample_rate))
    if win < 1:
        raise ConfigError("window shorter than one sample")
    n = len(clip.samples)
    if n < win:
        raise DataError(f"clip of {n} samples shorter than one {win}-sample window")
    hop = max(1, int(round(win * (1.0 - overlap))))
    count = (n - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(count)[:, None]
    return clip.samples[idx]


def mel_filterbank(n_filters: int, fft_size: int, sample_rate: int,
                   f_low: float, f_high: float) -> np.ndarray:
    """Triangular filter weights [n_filters, fft_size // 2 + 1].

    Breakpoints are equally spaced on the mel scale; each triangle rises from
    one breakpoint to the next and falls to the one after, evaluated at the
    FFT bin center frequencies.
    """
    if f_high > sample_rate / 2.0:
        raise ConfigError(f"f_high {f_high} Hz above Nyquist {sample_rate / 2.0} Hz")
    if f_low < 0 or f_low >= f_high:
        raise ConfigError(f"need 0 <= f_low < f_high, got {f_low}, {f_high}")
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), n_filters + 2))
    bins_hz = np.arange(fft_size // 2 + 1) * (sample_rate / fft_size)
    weights = np.zeros((n_filters, len(bins_hz)))
    for j in range(n_filters):
        left, center, right = edges_hz[j], edges_hz[j + 1], edges_hz[j + 2]
        rising = (bins_hz - left) / (center - left)
        falling = (right - bins_hz) / (right - center)
        weights[j] = np.clip(np.minimum(rising, falling), 0.0, None)
    return weights


def filter_center_frequencies(cfg: SpeechConfig, sample_rate: int | None = None) -> np.ndarray:
    rate = sample_rate or cfg.sample_rate
    f_high = cfg.resolved_f_high(rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_low), hz_to_mel(f_high), cfg.n_filters + 2))
    return edges[1:-1]


def _frame_window(length: int, kind: str) -> np.ndarray:
    if kind == "hamming":
        return np.hamming(length)
    if kind == "rect":
        return np.ones(length)
    raise ConfigError(f"unknown window function {kind!r}")


def mel_filterbank_energies(frame: np.ndarray, n_filters: int = 40, fft_size: int = 512,
                            sample_rate: int = 16000, f_low: float = 0.0,
                            f_high: float | None = None, window_fn: str = "hamming",
                            filterbank: np.ndarray | None = None) -> np.ndarray:
    """Log energies of one frame over the triangular mel filterbank."""
    frame = np.asarray(frame, dtype=np.float64)
    if fft_size < len(frame):
        raise ConfigError(f"fft_size {fft_size} smaller than frame length {len(frame)}")
    f_high = f_high if f_high is not None else sample_rate / 2.0
    if filterbank is None:
        filterbank = mel_filterbank(n_filters, fft_size, sample_rate, f_low, f_high)
    windowed = frame * _frame_window(len(frame), window_fn)
    spectrum = np.fft.rfft(windowed, n=fft_size)
    power = (spectrum.real ** 2 + spectrum.imag ** 2) / fft_size
    return np.log(filterbank @ power + LOG_ENERGY_FLOOR)


def mfcc_from_mfec(mfec: np.ndarray, n_coeffs: int = 13) -> np.ndarray:
    """Orthonormal type-II cosine transform of the log energies, truncated."""
    mfec = np.asarray(mfec, dtype=np.float64)
    if n_coeffs > mfec.shape[-1]:
        raise ConfigError(f"n_coeffs {n_coeffs} exceeds {mfec.shape[-1]} filter channels")
    return dct(mfec, type=2, norm="ortho", axis=-1)[..., :n_coeffs]


def inverse_mfcc(coeffs: np.ndarray) -> np.ndarray:
    return idct(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho", axis=-1)


def temporal_derivatives(static: np.ndarray, window: int = 2):
    """Regression deltas over time (axis 0), boundary rows replicated.

    d_t = sum_{n=1..window} n * (c_{t+n} - c_{t-n}) / (2 * sum n^2); the
    second-order result is the delta of the delta.
    """
    static = np.asarray(static, dtype=np.float64)
    if static.shape[0] < 2:
        raise DataError("need at least 2 time steps for derivatives")
    delta = _delta(static, window)
    delta_delta = _delta(delta, window)
    return delta, delta_delta


def _delta(x: np.ndarray, window: int) -> np.ndarray:
    t = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], window, axis=0), x,
                             np.repeat(x[-1:], window, axis=0)], axis=0)
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    out = np.zeros_like(x)
    for n in range(1, window + 1):
        out += n * (padded[window + n: window + n + t] - padded[window - n: window - n + t])
    return out / denom


def standardize(x: Tensor | np.ndarray) -> Tensor:
    """(x - mean) / max(std, eps) over all elements of the tensor."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    std = data.std()
    out = (data - data.mean()) / max(std, STD_EPS)
    return Tensor(out)


def mfec_matrix(clip: AudioClip, cfg: SpeechConfig) -> np.ndarray:
    """Static log filterbank energies [frames, n_filters] for a clip."""
    frames = frame_signal(clip, cfg.window_ms, cfg.overlap)
    fb = mel_filterbank(cfg.n_filters, cfg.fft_size, clip.sample_rate,
                        cfg.f_low, cfg.resolved_f_high(clip.sample_rate))
    return np.stack([
        mel_filterbank_energies(f, cfg.n_filters, cfg.fft_size, clip.sample_rate,
                                cfg.f_low, cfg.resolved_f_high(clip.sample_rate),
                                cfg.window_fn, filterbank=fb)
        for f in frames
    ])


def build_speech_cube(clip: AudioClip, cfg: SpeechConfig | None = None,
                      clip_id: str = "", start_s: float = 0.0,
                      cepstral: bool = False) -> SpeechCube:
    """Stack [static, delta, delta-delta] into a standardized feature cube.

    A 0.3 s clip yields [15, 40, 3]; in general the time axis has
    floor(duration / 0.02 s) steps. With ``cepstral`` the static features are
    cosine-transformed first (shape [T, n_coeffs, 3]).
    """
    cfg = cfg or SpeechConfig()
    static = mfec_matrix(clip, cfg)
    if cepstral:
        static = mfcc_from_mfec(static, cfg.n_coeffs)
    delta, delta_delta = temporal_derivatives(static, cfg.delta_window)
    cube = np.stack([static, delta, delta_delta], axis=-1)
    return SpeechCube(values=standardize(cube), clip_id=clip_id, start_s=start_s)
