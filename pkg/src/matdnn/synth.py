"""Seeded synthetic corpora in feature space, with exact phone and word annotations."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import Annotation, write_annotation
from .features import FeatureSequence
from .formats import write_feature_dir


@dataclass
class SynthConfig:
    num_phones: int = 8
    feature_dim: int = 8
    phone_mean_scale: float = 3.0
    phone_noise_std: float = 0.5
    min_duration: int = 5
    max_duration: int = 15
    vocab_size: int = 12
    min_word_phones: int = 2
    max_word_phones: int = 4
    num_speakers: int = 3
    speaker_offset_std: float = 0.8
    num_utterances: int = 60
    min_words: int = 3
    max_words: int = 8
    trajectory: bool = False
    trajectory_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        counts = (self.num_phones, self.feature_dim, self.vocab_size, self.num_speakers,
                  self.num_utterances, self.min_words, self.min_word_phones)
        if min(counts) < 1:
            raise ValueError("all counts must be positive")
        if self.min_duration < 1 or self.max_duration < self.min_duration:
            raise ValueError("invalid duration range")
        if self.max_words < self.min_words or self.max_word_phones < self.min_word_phones:
            raise ValueError("invalid range")


@dataclass
class SynthCorpus:
    features: list
    gold: Annotation
    config: SynthConfig
    phone_means: np.ndarray = field(repr=False, default=None)
    speaker_offsets: np.ndarray = field(repr=False, default=None)


def phone_symbol(p: int) -> str:
    return f"p{p:02d}"


def generate_corpus(cfg: SynthConfig | None = None) -> SynthCorpus:
    """Frame of phone p by speaker s = mean_p + offset_s + N(0, noise^2 I)."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    D = cfg.feature_dim
    phone_means = rng.normal(size=(cfg.num_phones, D)) * cfg.phone_mean_scale
    slopes = rng.normal(size=(cfg.num_phones, D)) * cfg.trajectory_scale
    offsets = rng.normal(size=(cfg.num_speakers, D)) * cfg.speaker_offset_std
    vocab = [
        tuple(rng.integers(cfg.num_phones, size=rng.integers(cfg.min_word_phones, cfg.max_word_phones + 1)))
        for _ in range(cfg.vocab_size)
    ]
    features, phones, words, speakers = [], {}, {}, {}
    for u in range(cfg.num_utterances):
        uid, s = f"u{u:04d}", u % cfg.num_speakers
        spk = f"s{s:02d}"
        word_ids = rng.integers(cfg.vocab_size, size=rng.integers(cfg.min_words, cfg.max_words + 1))
        blocks, ptier, wtier, t = [], [], [], 0
        for w in word_ids:
            w_start = t
            for p in vocab[w]:
                dur = int(rng.integers(cfg.min_duration, cfg.max_duration + 1))
                mean = phone_means[p] + offsets[s]
                if cfg.trajectory:
                    ramp = (np.arange(dur) + 0.5) / dur - 0.5
                    mean = mean + ramp[:, None] * slopes[p]
                blocks.append(mean + rng.normal(size=(dur, D)) * cfg.phone_noise_std)
                ptier.append((t, t + dur, phone_symbol(int(p))))
                t += dur
            wtier.append((w_start, t, f"w{int(w):02d}"))
        features.append(FeatureSequence(uid, spk, np.vstack(blocks), feature_kind="synthetic"))
        phones[uid], words[uid], speakers[uid] = ptier, wtier, spk
    return SynthCorpus(features, Annotation(phones, words, speakers), cfg, phone_means, offsets)


def write_corpus(directory, corpus: SynthCorpus):
    """features/*.matf + annotation.csv + synth_config.txt."""
    directory = Path(directory)
    write_feature_dir(directory / "features", corpus.features)
    write_annotation(directory / "annotation.csv", corpus.gold)
    lines = [f"{k} = {v}" for k, v in asdict(corpus.config).items()]
    (directory / "synth_config.txt").write_text("\n".join(lines) + "\n")
