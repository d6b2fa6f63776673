"""MFCC front-end: waveform I/O, feature extraction and feature files.

The pipeline turns 16 kHz, 16-bit mono audio into 39-dimensional vectors
(12 liftered cepstra + c0, with first and second order regression deltas)
at a 10 ms frame rate.
"""

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadSampleRate, BadWavFile, CorruptFeatFile, WaveTooShort

FEAT_MAGIC = b"MFT1"
FEAT_VERSION = 1
_FEAT_HEADER = struct.Struct("<4sIII")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    def __len__(self):
        return len(self.samples)


@dataclass
class FrontendConfig:
    sample_rate_hz: int = 16000
    preemphasis_coeff: float = 0.97
    window_ms: float = 25.0
    overlap_ms: float = 15.0
    use_hamming: bool = True
    zero_mean_waveform: bool = True
    cepstral_lifter: int = 22
    num_cepstra: int = 12
    num_mel_filters: int = 40
    mel_low_hz: float = 130.0
    mel_high_hz: float = 6800.0
    fft_size: int = 512
    log_energy_floor: float = 1e-10
    delta_window: int = 2
    cepstral_mean_norm: bool = False

    def __post_init__(self):
        if not 0.0 <= self.preemphasis_coeff < 1.0:
            raise ValueError("preemphasis_coeff must lie in [0, 1)")
        if self.overlap_ms >= self.window_ms:
            raise ValueError("overlap must be shorter than the window")
        if self.fft_size & (self.fft_size - 1) or self.fft_size < self.window_samples:
            raise ValueError("fft_size must be a power of two >= window length")
        if self.num_cepstra >= self.num_mel_filters:
            raise ValueError("num_cepstra must be smaller than num_mel_filters")
        if not 0 < self.mel_low_hz < self.mel_high_hz <= self.sample_rate_hz / 2:
            raise ValueError("mel band edges must satisfy 0 < low < high <= Nyquist")
        if self.log_energy_floor <= 0:
            raise ValueError("log_energy_floor must be positive")

    @property
    def hop_ms(self):
        return self.window_ms - self.overlap_ms

    @property
    def window_samples(self):
        return int(round(self.sample_rate_hz * self.window_ms / 1000.0))

    @property
    def hop_samples(self):
        return int(round(self.sample_rate_hz * self.hop_ms / 1000.0))

    @property
    def feature_dim(self):
        return 3 * (self.num_cepstra + 1)


@dataclass
class FeatureSequence:
    frames: np.ndarray
    utterance_id: str = ""
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim == 1 and frames.size == 0:
            frames = frames.reshape(0, 39)
        if frames.ndim != 2:
            raise ValueError("frames must be a 2-D array")
        self.frames = frames

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]

    def __len__(self):
        return self.num_frames


# ---------------------------------------------------------------------------
# Signal processing steps


def pre_emphasize(wave, coeff=0.97):
    """Apply ``y[n] = x[n] - coeff * x[n-1]`` with ``y[0] = x[0] * (1 - coeff)``.

    Accepts a :class:`Waveform` (returns a new one) or a plain array.
    """
    if not 0.0 <= coeff < 1.0:
        raise ValueError("pre-emphasis coefficient must lie in [0, 1)")
    x = wave.samples if isinstance(wave, Waveform) else np.asarray(wave, dtype=np.float64)
    y = np.empty_like(x)
    if len(x):
        y[0] = x[0] * (1.0 - coeff)
        y[1:] = x[1:] - coeff * x[:-1]
    if isinstance(wave, Waveform):
        return Waveform(y, wave.sample_rate, wave.source_id)
    return y


def num_frames(num_samples, cfg=None):
    cfg = cfg or FrontendConfig()
    win, hop = cfg.window_samples, cfg.hop_samples
    if num_samples < win:
        return 0
    return (num_samples - win) // hop + 1


def frame_signal(x, cfg):
    """Slice ``x`` into overlapping analysis windows, shape (T, window)."""
    win, hop = cfg.window_samples, cfg.hop_samples
    T = num_frames(len(x), cfg)
    view = np.lib.stride_tricks.sliding_window_view(x, win)
    return view[: (T - 1) * hop + 1 : hop]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg):
    """Triangular filters on the rfft bin grid.

    Returns ``(weights, centers_hz)`` with weights of shape
    (num_mel_filters, fft_size // 2 + 1).  Filters are defined on the
    continuous frequency axis so narrow low-frequency filters never
    collapse to an empty bin set.
    """
    n = cfg.num_mel_filters
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.mel_low_hz), hz_to_mel(cfg.mel_high_hz), n + 2))
    bin_hz = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate_hz / cfg.fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lo) / (mid - lo)
    falling = (hi - bin_hz[None, :]) / (hi - mid)
    weights = np.clip(np.minimum(rising, falling), 0.0, None)
    return weights, edges[1:-1].copy()


def dct_matrix(n):
    """Orthonormal DCT-II matrix; its transpose is the inverse transform."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.sqrt(2.0 / n) * np.cos(np.pi * k * (i + 0.5) / n)
    mat[0] /= np.sqrt(2.0)
    return mat


def dct2(x):
    x = np.asarray(x, dtype=np.float64)
    return x @ dct_matrix(x.shape[-1]).T


def idct2(c):
    c = np.asarray(c, dtype=np.float64)
    return c @ dct_matrix(c.shape[-1])


def lifter(cepstra, L):
    """Sinusoidal liftering of cepstra indexed 1..n along the last axis.

    ``L == 0`` leaves the input unchanged.
    """
    cepstra = np.asarray(cepstra, dtype=np.float64)
    if L <= 0:
        return cepstra.copy()
    k = np.arange(1, cepstra.shape[-1] + 1)
    return cepstra * (1.0 + (L / 2.0) * np.sin(np.pi * k / L))


def deltas(feats, window=2):
    """Regression deltas over +-``window`` frames with edge replication."""
    feats = np.asarray(feats, dtype=np.float64)
    T = feats.shape[0]
    if T == 0:
        return feats.copy()
    padded = np.concatenate([np.repeat(feats[:1], window, axis=0), feats,
                             np.repeat(feats[-1:], window, axis=0)])
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    out = np.zeros_like(feats)
    for n in range(1, window + 1):
        out += n * (padded[window + n : window + n + T] - padded[window - n : window - n + T])
    return out / denom


def _check_wave(wave, cfg):
    if wave.sample_rate != cfg.sample_rate_hz:
        raise BadSampleRate(
            f"{wave.source_id or 'waveform'}: sample rate {wave.sample_rate} Hz, "
            f"expected {cfg.sample_rate_hz}"
        )
    if len(wave.samples) < cfg.window_samples:
        raise WaveTooShort(
            f"{wave.source_id or 'waveform'}: {len(wave.samples)} samples, "
            f"need at least {cfg.window_samples}"
        )


def condition_waveform(wave, cfg):
    """Samples entering pre-emphasis (DC removed when configured)."""
    x = np.asarray(wave.samples, dtype=np.float64)
    return x - x.mean() if cfg.zero_mean_waveform else x


def filterbank_energies(wave, cfg=None):
    """Mel filterbank energies (before the log), shape (T, num_mel_filters)."""
    cfg = cfg or FrontendConfig()
    _check_wave(wave, cfg)
    x = pre_emphasize(condition_waveform(wave, cfg), cfg.preemphasis_coeff)
    frames = frame_signal(x, cfg)
    if cfg.use_hamming:
        frames = frames * np.hamming(cfg.window_samples)
    spectrum = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1))
    weights, _ = mel_filterbank(cfg)
    return spectrum @ weights.T


def extract_features(wave, cfg=None):
    """Compute the (T, 39) MFCC + delta + delta-delta sequence for ``wave``."""
    cfg = cfg or FrontendConfig()
    energies = filterbank_energies(wave, cfg)
    log_e = np.log(np.maximum(energies, cfg.log_energy_floor))
    cep = dct2(log_e)
    static = np.concatenate(
        [lifter(cep[:, 1 : cfg.num_cepstra + 1], cfg.cepstral_lifter), cep[:, :1]], axis=1
    )
    if cfg.cepstral_mean_norm:
        static = static - static.mean(axis=0)
    d1 = deltas(static, cfg.delta_window)
    d2 = deltas(d1, cfg.delta_window)
    frames = np.concatenate([static, d1, d2], axis=1)
    return FeatureSequence(frames, wave.source_id, cfg.hop_ms)


# ---------------------------------------------------------------------------
# Files


def read_wav(path, expected_rate=16000, source_id=None):
    """Load a RIFF/PCM 16-bit mono WAV file as a :class:`Waveform`.

    Samples are scaled to [-1, 1).  Any other encoding is rejected with a
    message naming the offending header field.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except wave.Error as exc:
        raise BadWavFile(f"{path}: unsupported WAV encoding (format field): {exc}") from exc
    except EOFError as exc:
        raise BadWavFile(f"{path}: truncated WAV header") from exc
    if channels != 1:
        raise BadWavFile(f"{path}: channels={channels}, expected 1 (mono)")
    if width != 2:
        raise BadWavFile(f"{path}: sample width={8 * width} bits, expected 16")
    if expected_rate is not None and rate != expected_rate:
        raise BadSampleRate(f"{path}: sample rate={rate} Hz, expected {expected_rate}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate, source_id if source_id is not None else path.stem)


def write_wav(path, samples, sample_rate=16000):
    """Write float samples in [-1, 1) as 16-bit PCM mono."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def write_feat(fs, path):
    frames = np.ascontiguousarray(fs.frames, dtype="<f4")
    T, dim = frames.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_FEAT_HEADER.pack(FEAT_MAGIC, FEAT_VERSION, T, dim))
        f.write(frames.tobytes())


def read_feat(path, utterance_id=None):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CorruptFeatFile(f"{path}: cannot read: {exc}") from exc
    if len(data) < _FEAT_HEADER.size:
        raise CorruptFeatFile(f"{path}: truncated header")
    magic, version, T, dim = _FEAT_HEADER.unpack_from(data)
    if magic != FEAT_MAGIC:
        raise CorruptFeatFile(f"{path}: bad magic {magic!r}")
    if version != FEAT_VERSION:
        raise CorruptFeatFile(f"{path}: unsupported version {version}")
    if dim == 0:
        raise CorruptFeatFile(f"{path}: zero feature dimension")
    expected = _FEAT_HEADER.size + 4 * T * dim
    if len(data) != expected:
        raise CorruptFeatFile(f"{path}: {len(data)} bytes, header implies {expected}")
    frames = np.frombuffer(data, dtype="<f4", offset=_FEAT_HEADER.size).reshape(T, dim)
    return FeatureSequence(frames.astype(np.float64), utterance_id or path.stem)


def read_feat_checked(path, dim=39, utterance_id=None):
    fs = read_feat(path, utterance_id)
    if fs.dim != dim:
        raise CorruptFeatFile(f"{path}: dimension {fs.dim}, expected {dim}")
    return fs
