"""Synthetic posterior streams for model-free end-to-end tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .transcript import WORD_DELIMITERS, LogPosteriors, TimedWord, Transcript, Vocabulary


@dataclass(frozen=True)
class SynthConfig:
    frames_per_token: int = 1
    blank_frames: int = 1
    peak: float = 0.95
    noise: float = 0.0
    frame_duration_s: float = 0.04
    seed: int = 0


def token_layout(tokens: Sequence[int], cfg: SynthConfig) -> list[tuple[int, int, int]]:
    """Frame spans ``(token, first, last)``: each token is held, then followed by blanks."""
    spans = []
    t = 0
    for tok in tokens:
        spans.append((tok, t, t + cfg.frames_per_token - 1))
        t += cfg.frames_per_token + cfg.blank_frames
    return spans


def peaked_posteriors(
    tokens: Sequence[int],
    vocab: Vocabulary,
    cfg: SynthConfig | None = None,
) -> LogPosteriors:
    """Posteriors whose per-frame argmax spells ``tokens``.

    Each frame puts ``peak`` on its target label and spreads the rest evenly.
    With ``noise > 0`` the log-probs get seeded Gaussian jitter before
    renormalization, which may move the argmax.
    """
    cfg = cfg or SynthConfig()
    if cfg.frames_per_token < 1 or cfg.blank_frames < 1:
        raise ValueError("frames_per_token and blank_frames must be >= 1")
    if not 1.0 / len(vocab) < cfg.peak < 1.0:
        raise ValueError("peak must lie strictly between 1/V and 1")
    n_frames = len(tokens) * (cfg.frames_per_token + cfg.blank_frames)
    targets = np.full(n_frames, vocab.blank_index, dtype=np.int64)
    for tok, first, last in token_layout(tokens, cfg):
        targets[first:last + 1] = tok
    V = len(vocab)
    probs = np.full((n_frames, V), (1.0 - cfg.peak) / (V - 1))
    probs[np.arange(n_frames), targets] = cfg.peak
    logp = np.log(probs)
    if cfg.noise > 0:
        rng = np.random.default_rng(cfg.seed)
        logp = logp + rng.normal(0.0, cfg.noise, size=logp.shape)
        logp -= np.logaddexp.reduce(logp, axis=1, keepdims=True)
    return LogPosteriors(logp, cfg.frame_duration_s)


def synthesize(
    words: Sequence[str],
    vocab: Vocabulary,
    cfg: SynthConfig | None = None,
    file_id: str = "synth",
) -> tuple[LogPosteriors, Transcript]:
    """Posteriors for ``words`` plus the timed transcript they encode."""
    cfg = cfg or SynthConfig()
    tokens = vocab.tokenize(words)
    post = peaked_posteriors(tokens, vocab, cfg)
    layout = token_layout(tokens, cfg)
    fd = cfg.frame_duration_s
    timed = []
    for text, first, last in vocab.detokenize(tokens):
        timed.append(TimedWord(text, layout[first][1] * fd, (layout[last][2] + 1) * fd))
    return post, Transcript(file_id, tuple(timed))


def char_vocabulary(alphabet: str = "abcdefghijklmnopqrstuvwxyz'") -> Vocabulary:
    """Blank, the characters of ``alphabet``, and a ``|`` word delimiter."""
    extra = [c for c in alphabet if c not in WORD_DELIMITERS]
    return Vocabulary(tuple(["<blk>", *extra, "|"]), 0)
