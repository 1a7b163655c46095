"""WAV decoding and fixed-parameter log-Mel patch extraction."""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

SAMPLE_RATE = 16000
N_FFT = 512
HOP_LENGTH = 128
N_MELS = 128
SEGMENT_SAMPLES = 4000
N_FRAMES = (SEGMENT_SAMPLES - N_FFT) // HOP_LENGTH + 1
LOG_FLOOR = 1e-10


class AudioFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(f"unsupported sample rate {self.sample_rate} Hz (need {SAMPLE_RATE})")
        if not np.all(np.isfinite(self.samples)):
            raise AudioFormatError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def decode_wav(path) -> Waveform:
    """Read a 16 kHz mono 16-bit PCM WAV, scaled to [-1, 1) by 1/32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate, n = wf.getnchannels(), wf.getsampwidth(), wf.getframerate(), wf.getnframes()
            raw = wf.readframes(n)
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: {exc}") from None
    except EOFError:
        raise AudioFormatError(f"{path}: truncated file") from None
    if channels != 1:
        raise AudioFormatError(f"{path}: {channels} channels, expected mono")
    if width != 2:
        raise AudioFormatError(f"{path}: {8 * width}-bit samples, expected 16-bit PCM")
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: unsupported sample rate {rate} Hz (need {SAMPLE_RATE})")
    if len(raw) != 2 * n:
        raise AudioFormatError(f"{path}: truncated file ({len(raw)} of {2 * n} data bytes)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterBank:
    weights: np.ndarray  # (n_mels, n_fft // 2 + 1)
    band_edges: np.ndarray  # (n_mels + 2,) Hz

    @property
    def centers(self) -> np.ndarray:
        return self.band_edges[1:-1]


def build_mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> MelFilterBank:
    """HTK-scale triangular filters from 0 Hz to Nyquist, area normalized."""
    if (n_mels, n_fft, sample_rate) != (N_MELS, N_FFT, SAMPLE_RATE):
        raise ValueError(
            f"only n_mels={N_MELS}, n_fft={N_FFT}, sample_rate={SAMPLE_RATE} are supported"
        )
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_freqs - lower) / (center - lower)
    falling = (upper - fft_freqs) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    # bands narrower than the bin spacing catch no bin center; pin them to the nearest bin
    for row in np.flatnonzero(~weights.any(axis=1)):
        weights[row, np.argmin(np.abs(fft_freqs - edges[row + 1]))] = 1.0
    weights *= 2.0 / (upper - lower)
    return MelFilterBank(weights, edges)


_BANK: MelFilterBank | None = None
_HANN = np.hanning(N_FFT + 1)[:-1]  # periodic Hann


def default_filterbank() -> MelFilterBank:
    global _BANK
    if _BANK is None:
        _BANK = build_mel_filterbank()
    return _BANK


def frame_count(n_samples: int) -> int:
    return (n_samples - N_FFT) // HOP_LENGTH + 1


def power_spectrogram(signal: np.ndarray) -> np.ndarray:
    """Unpadded Hann-windowed STFT power, shape (n_fft // 2 + 1, frames)."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or len(signal) < N_FFT:
        raise ValueError(f"need a 1-D signal of at least {N_FFT} samples")
    frames = np.lib.stride_tricks.sliding_window_view(signal, N_FFT)[::HOP_LENGTH]
    spec = np.fft.rfft(frames * _HANN, n=N_FFT, axis=1)
    return (spec.real**2 + spec.imag**2).T


def log_mel(segment: np.ndarray, bank: MelFilterBank | None = None) -> np.ndarray:
    """Map a 4000-sample segment to its (128, 28) log-Mel patch."""
    segment = np.asarray(segment)
    if segment.shape != (SEGMENT_SAMPLES,):
        raise ValueError(f"segment must have exactly {SEGMENT_SAMPLES} samples, got shape {segment.shape}")
    bank = default_filterbank() if bank is None else bank
    return np.log(bank.weights @ power_spectrogram(segment) + LOG_FLOOR)


class LogMelExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer: ``(n, 4000)`` waveforms to ``(n, 128, 28)`` patches.

    The parameters are fixed; they are exposed so the extractor shows up
    in ``get_params`` alongside the downstream estimators.
    """

    def __init__(self, n_mels=N_MELS, n_fft=N_FFT, hop_length=HOP_LENGTH, sample_rate=SAMPLE_RATE):
        self.n_mels = n_mels
        self.n_fft = n_fft
        self.hop_length = hop_length
        self.sample_rate = sample_rate

    def fit(self, X, y=None):
        if self.hop_length != HOP_LENGTH:
            raise ValueError(f"hop_length must be {HOP_LENGTH}")
        self.filterbank_ = build_mel_filterbank(self.n_mels, self.n_fft, self.sample_rate)
        return self

    def transform(self, X):
        if not hasattr(self, "filterbank_"):
            self.fit(X)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None]
        if X.ndim != 2 or X.shape[1] != SEGMENT_SAMPLES:
            raise ValueError(f"expected shape (n, {SEGMENT_SAMPLES}), got {X.shape}")
        return np.stack([log_mel(x, self.filterbank_) for x in X]).astype(np.float32)


def write_patch_cache(path, segment_ids, patches: np.ndarray) -> None:
    """Write little-endian float32 patches plus a ``<path>.idx.csv`` sidecar."""
    path = Path(path)
    patches = np.ascontiguousarray(patches, dtype="<f4")
    if patches.ndim != 3 or patches.shape[1:] != (N_MELS, N_FRAMES):
        raise ValueError(f"patches must be (n, {N_MELS}, {N_FRAMES})")
    if len(segment_ids) != len(patches):
        raise ValueError("segment_ids and patches differ in length")
    patch_bytes = N_MELS * N_FRAMES * 4
    path.write_bytes(patches.tobytes())
    with open(_index_path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["segment_id", "offset"])
        for i, sid in enumerate(segment_ids):
            writer.writerow([sid, i * patch_bytes])


def read_patch_cache(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    index = _index_path(path)
    if not path.exists() or not index.exists():
        raise FileNotFoundError(f"patch cache missing: {path} (and {index.name})")
    with open(index, newline="") as fh:
        rows = list(csv.DictReader(fh))
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    patch_floats = N_MELS * N_FRAMES
    if data.size != patch_floats * len(rows):
        raise ValueError(f"{path}: size does not match its index ({len(rows)} patches)")
    data = data.reshape(len(rows), N_MELS, N_FRAMES)
    offsets = np.array([int(r["offset"]) for r in rows], dtype=np.int64) // (patch_floats * 4)
    return [r["segment_id"] for r in rows], data[offsets].astype(np.float32)


def _index_path(path: Path) -> Path:
    return path.with_name(path.name + ".idx.csv")
