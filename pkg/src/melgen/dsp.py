"""Audio signal processing: Mel scale, STFT/ISTFT, Mel spectrograms,
least-squares spectrogram inversion and Griffin-Lim phase reconstruction.

Everything here is a pure function of its inputs; filterbanks are immutable
after construction, so all of it is safe to share across threads.

Conventions
-----------
* Waveform samples are float64 in [-1, 1].
* STFT frame t covers samples ``[t*hop, t*hop + win)`` with a periodic Hann
  window applied; no centering or padding, so a waveform of length
  ``win + 3*hop`` yields exactly 4 frames.
* Complex spectrograms and magnitude grids are ndarrays shaped
  ``(win//2 + 1, n_frames)``; Mel grids are ``(num_mels, n_frames)``.
* The Mel scale uses the HTK convention ``m = 2595 * log10(1 + f/700)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import resample_poly

from .errors import ConfigError

_MEL_LOG_BASE = 2595.0
_MEL_BREAK_HZ = 700.0

# minimum relative overlap-add window power for a valid (win, hop) pair
_OLA_EPS = 1e-8


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float64 samples in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SpectroParams:
    """Analysis parameters shared by the STFT and the Mel filterbank."""

    sample_rate: int
    stft_win_sz: int
    stft_hop_sz: int
    num_mels: int
    f_min: float = 0.0
    f_max: float | None = None
    power: float = 2.0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if not (0 < self.stft_hop_sz <= self.stft_win_sz):
            raise ConfigError(
                f"need 0 < stft_hop_sz <= stft_win_sz, got hop={self.stft_hop_sz} "
                f"win={self.stft_win_sz}"
            )
        if self.f_max is None:
            object.__setattr__(self, "f_max", self.sample_rate / 2)
        if not (0 <= self.f_min < self.f_max <= self.sample_rate / 2):
            raise ConfigError(
                f"need 0 <= f_min < f_max <= sample_rate/2, got "
                f"f_min={self.f_min} f_max={self.f_max} rate={self.sample_rate}"
            )
        if self.num_mels < 1:
            raise ConfigError(f"num_mels must be >= 1, got {self.num_mels}")

    @property
    def n_bins(self) -> int:
        return self.stft_win_sz // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.stft_win_sz:
            return 0
        return (n_samples - self.stft_win_sz) // self.stft_hop_sz + 1


@dataclass(frozen=True)
class MelSpectrogram:
    """Nonnegative Mel-band energies shaped (num_mels, n_frames)."""

    values: np.ndarray
    params: SpectroParams

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != self.params.num_mels:
            raise ValueError(
                f"expected ({self.params.num_mels}, T) grid, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("Mel spectrogram values must be finite and nonnegative")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


class MelFilterbank:
    """Triangular Mel filterbank with a cached least-squares inverse.

    ``weights`` is a (num_mels, n_bins) nonnegative matrix; each row is one
    contiguous triangular band, with band centers strictly increasing.
    """

    def __init__(self, weights: np.ndarray, params: SpectroParams):
        weights = np.asarray(weights, dtype=np.float64)
        weights.setflags(write=False)
        self.weights = weights
        self.params = params
        self._pinv: np.ndarray | None = None

    @property
    def pinv(self) -> np.ndarray:
        if self._pinv is None:
            pinv = np.linalg.pinv(self.weights)
            pinv.setflags(write=False)
            self._pinv = pinv
        return self._pinv


# ---------------------------------------------------------------------------
# Mel scale
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    """Convert Hz to Mel (HTK formula). Accepts scalars or arrays."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be nonnegative")
    m = _MEL_LOG_BASE * np.log10(1.0 + f / _MEL_BREAK_HZ)
    return float(m) if m.ndim == 0 else m


def mel_to_hz(m):
    """Exact inverse of :func:`hz_to_mel`."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("mel value must be nonnegative")
    f = _MEL_BREAK_HZ * (10.0 ** (m / _MEL_LOG_BASE) - 1.0)
    return float(f) if f.ndim == 0 else f


def build_mel_filterbank(params: SpectroParams) -> MelFilterbank:
    """Build triangular filters with corners equally spaced on the Mel axis.

    Raises :class:`ConfigError` when num_mels is too large for the FFT
    resolution (some filter would have no support) or the filterbank is
    rank-deficient (its pseudo-inverse would be meaningless).
    """
    n_bins = params.n_bins
    fft_freqs = np.arange(n_bins) * params.sample_rate / params.stft_win_sz
    corners = mel_to_hz(np.linspace(hz_to_mel(params.f_min), hz_to_mel(params.f_max),
                                    params.num_mels + 2))
    lower, center, upper = corners[:-2], corners[1:-1], corners[2:]

    # triangular response per band, evaluated at the FFT bin frequencies
    up = (fft_freqs[None, :] - lower[:, None]) / (center - lower)[:, None]
    down = (upper[:, None] - fft_freqs[None, :]) / (upper - center)[:, None]
    weights = np.maximum(0.0, np.minimum(up, down))

    if np.any(weights.max(axis=1) <= 0.0):
        raise ConfigError(
            f"num_mels={params.num_mels} too large for win={params.stft_win_sz} at "
            f"rate {params.sample_rate}: some filter has no FFT bin support"
        )
    if np.linalg.matrix_rank(weights) < params.num_mels:
        raise ConfigError("mel filterbank is rank-deficient; reduce num_mels")
    return MelFilterbank(weights, params)


# ---------------------------------------------------------------------------
# STFT / ISTFT
# ---------------------------------------------------------------------------


def _hann(win_sz: int) -> np.ndarray:
    # periodic Hann; strictly positive except at sample 0
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win_sz) / win_sz)


def _check_ola(params: SpectroParams) -> np.ndarray:
    """Validate that the squared window overlap-adds to a usable envelope."""
    win, hop = params.stft_win_sz, params.stft_hop_sz
    w2 = _hann(win) ** 2
    # envelope over one window span when frames tile every `hop` samples
    env = np.zeros(2 * win)
    for t in range(0, 2 * win - win + 1, hop):
        env[t:t + win] += w2
    interior = env[win - hop:win]
    if interior.min() < _OLA_EPS * env.max():
        raise ConfigError(
            f"hop={hop} with win={win} violates the overlap-add condition "
            "(use hop <= win/2 for a Hann window)"
        )
    return w2


def stft(w: Waveform, params: SpectroParams) -> np.ndarray:
    """Short-time Fourier transform, shaped (win//2 + 1, n_frames)."""
    x = w.samples
    win, hop = params.stft_win_sz, params.stft_hop_sz
    if len(x) < win:
        raise ValueError(f"waveform ({len(x)} samples) shorter than one window ({win})")
    n_frames = params.n_frames(len(x))
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    spec = np.fft.rfft(frames * _hann(win), axis=1)
    return spec.T.copy()


def istft(s: np.ndarray, params: SpectroParams) -> Waveform:
    """Least-squares overlap-add inverse of :func:`stft`.

    Each frame is windowed again and the result divided by the accumulated
    squared window, which reconstructs interior samples of an unmodified
    spectrogram exactly and gives the least-squares signal estimate for a
    modified one.
    """
    s = np.asarray(s)
    win, hop = params.stft_win_sz, params.stft_hop_sz
    if s.ndim != 2 or s.shape[0] != params.n_bins:
        raise ValueError(f"expected ({params.n_bins}, T) spectrogram, got {s.shape}")
    w2 = _check_ola(params)
    window = _hann(win)
    n_frames = s.shape[1]
    n_out = win + (n_frames - 1) * hop
    num = np.zeros(n_out)
    den = np.zeros(n_out)
    frames = np.fft.irfft(s.T, n=win, axis=1)
    for t in range(n_frames):
        start = t * hop
        num[start:start + win] += frames[t] * window
        den[start:start + win] += w2
    out = num / np.maximum(den, _OLA_EPS * max(den.max(), 1e-300))
    return Waveform(out, params.sample_rate)


# ---------------------------------------------------------------------------
# Mel transforms
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _cached_filterbank(params: SpectroParams) -> MelFilterbank:
    # filterbanks are immutable, so sharing the cached instance is safe
    return build_mel_filterbank(params)


def mel_spectrogram(w: Waveform, params: SpectroParams,
                    filterbank: MelFilterbank | None = None) -> MelSpectrogram:
    """Filterbank applied to ``|stft|**power``."""
    if filterbank is None:
        filterbank = _cached_filterbank(params)
    mag = np.abs(stft(w, params)) ** params.power
    return MelSpectrogram(filterbank.weights @ mag, params)


def mel_to_linear(m: MelSpectrogram, filterbank: MelFilterbank | None = None) -> np.ndarray:
    """Least-squares estimate of the linear-frequency magnitude grid.

    Applies the filterbank pseudo-inverse per frame and clamps negatives to
    zero; lossy by construction since the filterbank discards resolution.
    """
    if filterbank is None:
        filterbank = _cached_filterbank(m.params)
    lin = filterbank.pinv @ m.values
    return np.maximum(lin, 0.0)


# ---------------------------------------------------------------------------
# Griffin-Lim
# ---------------------------------------------------------------------------


def spectral_convergence(mag_est: np.ndarray, mag_ref: np.ndarray) -> float:
    """Normalized magnitude mismatch ||A - B|| / ||B||."""
    denom = np.linalg.norm(mag_ref)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(mag_est - mag_ref) / denom)


def griffin_lim(mag: np.ndarray, params: SpectroParams, iters: int = 60,
                seed: int = 0, return_errors: bool = False):
    """Reconstruct a waveform from a linear magnitude spectrogram.

    Starts from uniform random phases drawn from ``seed`` and alternates
    ISTFT/STFT projections, keeping the given magnitudes and the estimated
    phases.  ``iters=0`` returns the ISTFT of the seed-phase spectrogram.
    With ``return_errors`` the per-iteration spectral-convergence errors
    (including the initial one) are returned alongside the waveform; they are
    non-increasing.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    rng = np.random.default_rng(seed)
    phase = rng.uniform(-np.pi, np.pi, size=mag.shape)
    spec = mag * np.exp(1j * phase)
    errors = []
    wave = istft(spec, params)
    for _ in range(iters):
        est = stft(wave, params)
        errors.append(spectral_convergence(np.abs(est), mag))
        spec = mag * np.exp(1j * np.angle(est))
        wave = istft(spec, params)
    errors.append(spectral_convergence(np.abs(stft(wave, params)), mag))
    if return_errors:
        return wave, errors
    return wave


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase windowed-sinc (Kaiser) resampling to ``target_rate``."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples, target_rate)
    g = np.gcd(int(target_rate), int(w.sample_rate))
    up, down = target_rate // g, w.sample_rate // g
    out = resample_poly(w.samples, up, down, window=("kaiser", 5.0))
    return Waveform(out, target_rate)
