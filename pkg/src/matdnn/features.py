"""Frame-level acoustic features: MFCC, context stacking, tandem concatenation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.fft import dct

FEATURE_KINDS = ("mfcc", "tandem", "bottleneck", "stacked", "synthetic")


@dataclass
class Waveform:
    utterance_id: str
    samples: np.ndarray
    sample_rate: int = 16000
    speaker_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.sample_rate <= 0:
            raise ValueError(f"{self.utterance_id}: sample_rate must be positive")


@dataclass
class FeatureSequence:
    """A T x D matrix of frame features for one utterance."""

    utterance_id: str
    speaker_id: str
    frames: np.ndarray
    frame_shift: int = 10
    feature_kind: str = "mfcc"

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError(f"{self.utterance_id}: frames must be a non-empty T x D matrix")
        if not np.all(np.isfinite(frames)):
            raise ValueError(f"{self.utterance_id}: non-finite feature values")
        self.frames = frames

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class MfccConfig:
    window_length: float = 25.0  # ms
    frame_shift: float = 10.0  # ms
    num_mel_filters: int = 26
    num_cepstra: int = 12
    include_energy: bool = True
    delta_window: int = 2
    energy_floor: float = -50.0
    preemphasis: float = 0.97
    low_freq: float = 0.0
    high_freq: float | None = None
    log_floor: float = 1e-10

    def __post_init__(self):
        if not 0 < self.num_cepstra < self.num_mel_filters:
            raise ValueError("num_cepstra must be positive and below num_mel_filters")
        if self.delta_window < 1:
            raise ValueError("delta_window must be >= 1")

    @property
    def dim(self) -> int:
        return (self.num_cepstra + int(self.include_energy)) * 3


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_filters, nfft, sample_rate, low_freq=0.0, high_freq=None):
    """Triangular filters equally spaced on the mel scale, shape (num_filters, nfft//2+1)."""
    high_freq = sample_rate / 2.0 if high_freq is None else high_freq
    edges = mel_to_hz(np.linspace(hz_to_mel(low_freq), hz_to_mel(high_freq), num_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - left) / (center - left)
    falling = (right - freqs) / (right - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def deltas(feat: np.ndarray, window: int = 2) -> np.ndarray:
    """Regression deltas over +-window frames with edge replication."""
    T = feat.shape[0]
    padded = np.pad(feat, ((window, window), (0, 0)), mode="edge")
    denom = 2.0 * sum(k * k for k in range(1, window + 1))
    out = np.zeros_like(feat, dtype=np.float64)
    for k in range(1, window + 1):
        out += k * (padded[window + k : window + k + T] - padded[window - k : window - k + T])
    return out / denom


def _frame_signal(samples, win, shift):
    T = (len(samples) - win) // shift + 1
    view = np.lib.stride_tricks.sliding_window_view(samples, win)
    return view[::shift][:T]


def compute_mfcc(w: Waveform, cfg: MfccConfig | None = None) -> FeatureSequence:
    """MFCC + log energy with deltas and double deltas (39 dims under defaults).

    Cepstra are c1..c{num_cepstra}; the log frame energy (floored) is appended
    after them. Frame t covers samples [t*shift, t*shift + window).
    """
    cfg = cfg or MfccConfig()
    sr = w.sample_rate
    win = int(round(cfg.window_length * sr / 1000.0))
    shift = int(round(cfg.frame_shift * sr / 1000.0))
    if len(w.samples) < win:
        raise ValueError(
            f"utterance {w.utterance_id!r}: {len(w.samples)} samples is shorter than "
            f"one analysis window ({win} samples)"
        )
    x = w.samples
    if cfg.preemphasis:
        x = np.concatenate([x[:1], x[1:] - cfg.preemphasis * x[:-1]])
    frames = _frame_signal(x, win, shift) * np.hamming(win)
    nfft = 1 << (win - 1).bit_length()
    power = np.abs(np.fft.rfft(frames, nfft)) ** 2 / nfft
    fbank = power @ mel_filterbank(cfg.num_mel_filters, nfft, sr, cfg.low_freq, cfg.high_freq).T
    log_fbank = np.log(np.maximum(fbank, cfg.log_floor))
    static = dct(log_fbank, type=2, axis=1, norm="ortho")[:, 1 : cfg.num_cepstra + 1]
    if cfg.include_energy:
        with np.errstate(divide="ignore"):
            energy = np.log(np.sum(frames**2, axis=1))
        energy = np.maximum(energy, cfg.energy_floor)
        static = np.hstack([static, energy[:, None]])
    d1 = deltas(static, cfg.delta_window)
    d2 = deltas(d1, cfg.delta_window)
    return FeatureSequence(
        w.utterance_id,
        w.speaker_id,
        np.hstack([static, d1, d2]),
        frame_shift=int(round(cfg.frame_shift)),
        feature_kind="mfcc",
    )


def stack_context(f: FeatureSequence, w: int) -> FeatureSequence:
    """Splice each frame with w neighbours on either side (edge-replicated)."""
    if w < 0:
        raise ValueError("context radius must be >= 0")
    if w == 0:
        return replace(f, frames=f.frames.copy())
    T = f.num_frames
    padded = np.pad(f.frames, ((w, w), (0, 0)), mode="edge")
    stacked = np.hstack([padded[k : k + T] for k in range(2 * w + 1)])
    return replace(f, frames=stacked, feature_kind="stacked")


def utterance_summary(f: FeatureSequence) -> np.ndarray:
    """Per-dimension mean and standard deviation, concatenated (2D values).

    Utterance-level conditioning vector used in place of an i-vector.
    """
    return np.concatenate([f.frames.mean(axis=0), f.frames.std(axis=0)])


def concat_tandem(parts) -> FeatureSequence:
    """Frame-wise concatenation; 1-D vectors are broadcast to every frame."""
    parts = list(parts)
    seqs = [p for p in parts if isinstance(p, FeatureSequence)]
    if not seqs:
        raise ValueError("concat_tandem needs at least one FeatureSequence")
    ref = seqs[0]
    if len(parts) == 1:
        return replace(ref, frames=ref.frames.copy())
    blocks = []
    for p in parts:
        if isinstance(p, FeatureSequence):
            if p.utterance_id != ref.utterance_id:
                raise ValueError(
                    f"utterance mismatch: {p.utterance_id!r} vs {ref.utterance_id!r}"
                )
            if p.num_frames != ref.num_frames:
                raise ValueError(
                    f"{ref.utterance_id}: frame count mismatch ({p.num_frames} vs {ref.num_frames})"
                )
            blocks.append(p.frames)
        else:
            vec = np.asarray(p, dtype=np.float64).ravel()
            blocks.append(np.broadcast_to(vec, (ref.num_frames, vec.size)))
    return replace(ref, frames=np.hstack(blocks), feature_kind="tandem")
