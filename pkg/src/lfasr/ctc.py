"""CTC decoding: greedy, prefix beam search, rescoring, joint decoding, forced alignment.

Everything is computed in the natural-log domain; ``-inf`` marks impossible
events. Ties are broken toward the lexicographically smaller token sequence.

The attention side of the joint CTC/attention model is represented by the
:class:`SequenceScorer` protocol: anything that can score the next token given
a prefix. No neural scorer ships here; :class:`UniformScorer` and
:class:`TableScorer` are reference implementations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Protocol, Sequence

import numpy as np

from .logmath import NEG_INF, log_add, logsumexp, weighted
from .transcript import LogPosteriors, TimedWord, Vocabulary


class DecodeError(ValueError):
    pass


class InfeasibleAlignmentError(DecodeError):
    """The target cannot be aligned to the available frames."""


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 10
    prune_log_threshold: float = NEG_INF
    ctc_weight: float = 0.5
    verbatimicity: float = 1.0

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError("ctc_weight must be in [0, 1]")
        if not 0.0 <= self.verbatimicity <= 1.0:
            raise ValueError("verbatimicity must be in [0, 1]")


class SequenceScorer(Protocol):
    def score_next(self, prefix: tuple[int, ...], token: int, verbatimicity: float) -> float:
        """Log-probability increment for appending ``token`` to ``prefix``."""
        ...

    def final_bonus(self, prefix: tuple[int, ...]) -> float:
        """Log-probability adjustment for ending the sequence after ``prefix``."""
        ...


class UniformScorer:
    """Assigns every token the same increment, ``-log(vocab_size)``."""

    def __init__(self, vocab_size: int):
        self.increment = -math.log(vocab_size)

    def score_next(self, prefix, token, verbatimicity):
        return self.increment

    def final_bonus(self, prefix):
        return 0.0


class TableScorer:
    """Scorer backed by an explicit ``prefix -> {token: increment}`` table.

    Tokens missing from a prefix's row get ``default`` (``-log(vocab_size)``
    unless given). Each row, defaults included, must not carry more than
    unit probability mass. ``final`` maps prefixes to terminal bonuses.
    """

    def __init__(
        self,
        vocab_size: int,
        increments: Mapping[Sequence[int], Mapping[int, float]] | None = None,
        final: Mapping[Sequence[int], float] | None = None,
        default: float | None = None,
    ):
        self.vocab_size = vocab_size
        self.default = -math.log(vocab_size) if default is None else default
        self.increments = {tuple(k): dict(v) for k, v in (increments or {}).items()}
        self.final = {tuple(k): v for k, v in (final or {}).items()}
        for prefix, row in self.increments.items():
            if any(not 0 <= tok < vocab_size for tok in row):
                raise ValueError(f"token out of range in scorer row for {prefix}")
            n_default = vocab_size - len(row)
            mass = logsumexp(
                list(row.values()) + ([self.default + math.log(n_default)] if n_default else [])
            )
            if mass > 1e-6:
                raise ValueError(f"scorer row for prefix {prefix} exceeds unit mass ({mass:.3g})")
        if self.default + math.log(vocab_size) > 1e-6:
            raise ValueError("default increment exceeds unit mass over the vocabulary")

    def score_next(self, prefix, token, verbatimicity):
        return self.increments.get(tuple(prefix), {}).get(token, self.default)

    def final_bonus(self, prefix):
        return self.final.get(tuple(prefix), 0.0)


@dataclass(frozen=True)
class PrefixHypothesis:
    tokens: tuple[int, ...]
    logp_blank: float
    logp_nonblank: float
    scorer_logp: float = 0.0
    score: float = 0.0

    @property
    def logp_ctc(self) -> float:
        return log_add(self.logp_blank, self.logp_nonblank)


@dataclass(frozen=True)
class AlignmentPath:
    labels: tuple[int, ...]
    total_logp: float
    token_frames: tuple[int, ...]
    token_end_frames: tuple[int, ...]


def _check_dims(post: LogPosteriors, vocab: Vocabulary) -> None:
    if post.vocab_size != len(vocab):
        raise DecodeError(
            f"posteriors have {post.vocab_size} columns but the vocabulary has {len(vocab)} tokens"
        )


def collapse(path: Sequence[int], blank: int) -> list[int]:
    """Merge repeated labels, then drop blanks."""
    out = []
    prev = None
    for label in path:
        if label != prev and label != blank:
            out.append(int(label))
        prev = label
    return out


def token_spans(path: Sequence[int], blank: int) -> list[tuple[int, int, int]]:
    """``(token, first_frame, last_frame)`` for each emitted token of a frame path."""
    spans: list[list[int]] = []
    prev = None
    for t, label in enumerate(path):
        label = int(label)
        if label != blank:
            if label == prev:
                spans[-1][2] = t
            else:
                spans.append([label, t, t])
        prev = label
    return [tuple(s) for s in spans]  # type: ignore[misc]


def greedy_path(post: LogPosteriors) -> np.ndarray:
    # np.argmax picks the lowest index among ties
    return np.argmax(post.values, axis=1) if post.frames else np.zeros(0, dtype=np.int64)


def greedy_decode(post: LogPosteriors, vocab: Vocabulary) -> list[int]:
    _check_dims(post, vocab)
    return collapse(greedy_path(post).tolist(), vocab.blank_index)


def _combined(config: BeamConfig, ctc: float, scorer_logp: float, with_scorer: bool) -> float:
    if not with_scorer:
        return ctc
    return weighted(config.ctc_weight, ctc) + weighted(1.0 - config.ctc_weight, scorer_logp)


def _search(
    post: LogPosteriors,
    vocab: Vocabulary,
    config: BeamConfig,
    scorer: SequenceScorer | None,
    final: bool,
) -> list[PrefixHypothesis]:
    _check_dims(post, vocab)
    blank = vocab.blank_index
    threshold = config.prune_log_threshold
    fused = scorer is not None
    verb = config.verbatimicity

    # prefix -> [logp_blank, logp_nonblank]
    beam: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_INF]}
    scored: dict[tuple[int, ...], float] = {(): 0.0}

    for t in range(post.frames):
        row = post.values[t].tolist()
        lp_blank = row[blank]
        candidates = [c for c in range(len(row)) if c != blank and row[c] >= threshold]
        nxt: dict[tuple[int, ...], list[float]] = {}
        for prefix, (pb, pnb) in beam.items():
            total = log_add(pb, pnb)
            entry = nxt.setdefault(prefix, [NEG_INF, NEG_INF])
            entry[0] = log_add(entry[0], total + lp_blank)
            last = prefix[-1] if prefix else -1
            if last >= 0:
                entry[1] = log_add(entry[1], pnb + row[last])
            for c in candidates:
                ext = prefix + (c,)
                e = nxt.get(ext)
                if e is None:
                    e = nxt[ext] = [NEG_INF, NEG_INF]
                # a repeated token is only a new emission after a blank
                e[1] = log_add(e[1], (pb if c == last else total) + row[c])

        if fused:
            new_scored = {}
            for prefix in nxt:
                if prefix in scored:
                    new_scored[prefix] = scored[prefix]
                else:
                    parent = prefix[:-1]
                    new_scored[prefix] = scored[parent] + scorer.score_next(parent, prefix[-1], verb)
            scored = new_scored

        ranked = sorted(
            nxt.items(),
            key=lambda kv: (
                -_combined(config, log_add(*kv[1]), scored.get(kv[0], 0.0), fused),
                kv[0],
            ),
        )
        beam = dict(ranked[: config.beam_size])
        if fused:
            scored = {p: scored[p] for p in beam}

    hyps = []
    for prefix, (pb, pnb) in beam.items():
        sc = scored[prefix] if fused else 0.0
        if fused and final:
            sc += scorer.final_bonus(prefix)
        score = _combined(config, log_add(pb, pnb), sc, fused)
        hyps.append(PrefixHypothesis(prefix, pb, pnb, sc, score))
    hyps.sort(key=lambda h: (-h.score, h.tokens))
    return hyps[: config.beam_size]


def prefix_beam_search(
    post: LogPosteriors,
    vocab: Vocabulary,
    config: BeamConfig | None = None,
    scorer: SequenceScorer | None = None,
) -> list[PrefixHypothesis]:
    """CTC prefix beam search, optionally shallow-fused with ``scorer``.

    Hypotheses are ranked by ``ctc_weight * logp_ctc + (1 - ctc_weight) *
    scorer_logp`` when a scorer is given, by ``logp_ctc`` alone otherwise.
    """
    return _search(post, vocab, config or BeamConfig(), scorer, final=False)


def joint_decode(
    post: LogPosteriors,
    vocab: Vocabulary,
    scorer: SequenceScorer,
    config: BeamConfig | None = None,
) -> list[PrefixHypothesis]:
    """Frame-synchronous joint CTC/scorer search.

    Each prefix extension is scored by the scorer when it is created, so the
    scorer shapes pruning at every frame; the scorer's terminal bonus is
    added before the final ranking.
    """
    if scorer is None:
        raise ValueError("joint_decode needs a scorer")
    return _search(post, vocab, config or BeamConfig(), scorer, final=True)


def sequence_score(scorer: SequenceScorer, tokens: Sequence[int], verbatimicity: float) -> float:
    """Total scorer log-probability of a complete token sequence."""
    tokens = tuple(tokens)
    total = 0.0
    for i, tok in enumerate(tokens):
        total += scorer.score_next(tokens[:i], tok, verbatimicity)
    return total + scorer.final_bonus(tokens)


def attention_rescore(
    hyps: Sequence[PrefixHypothesis],
    scorer: SequenceScorer,
    config: BeamConfig | None = None,
) -> list[PrefixHypothesis]:
    """Second pass: re-rank complete hypotheses with the scorer (stable sort)."""
    if not hyps:
        raise ValueError("attention_rescore needs at least one hypothesis")
    config = config or BeamConfig()
    rescored = []
    for h in hyps:
        sc = sequence_score(scorer, h.tokens, config.verbatimicity)
        rescored.append(replace(h, scorer_logp=sc, score=_combined(config, h.logp_ctc, sc, True)))
    return sorted(rescored, key=lambda h: -h.score)


def forced_align(post: LogPosteriors, vocab: Vocabulary, target: Sequence[int]) -> AlignmentPath:
    """Viterbi alignment of ``target`` through the CTC topology.

    Blanks are optional between distinct tokens and mandatory between
    repeats. Raises :class:`InfeasibleAlignmentError` when no path exists.
    """
    _check_dims(post, vocab)
    blank = vocab.blank_index
    target = [int(x) for x in target]
    if not target:
        raise DecodeError("forced_align needs a non-empty target")
    if any(x == blank or not 0 <= x < len(vocab) for x in target):
        raise DecodeError("target must contain valid non-blank token indices")
    T = post.frames
    needed = len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)
    if T < needed:
        raise InfeasibleAlignmentError(
            f"target of {len(target)} tokens needs at least {needed} frames, got {T}"
        )

    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    S = ext.size
    # skip transition s-2 -> s allowed into a token that differs from the previous token
    can_skip = np.zeros(S, dtype=bool)
    can_skip[3::2] = ext[3::2] != ext[1:-2:2]

    lp = post.values
    delta = np.full(S, -np.inf)
    delta[0] = lp[0, blank]
    delta[1] = lp[0, ext[1]]
    back = np.zeros((T, S), dtype=np.int8)
    for t in range(1, T):
        prev1 = np.concatenate(([-np.inf], delta[:-1]))
        prev2 = np.concatenate(([-np.inf, -np.inf], delta[:-2]))
        prev2[~can_skip] = -np.inf
        stacked = np.stack([delta, prev1, prev2])
        choice = np.argmax(stacked, axis=0)
        back[t] = choice
        delta = stacked[choice, np.arange(S)] + lp[t, ext]

    end = S - 1 if delta[S - 1] >= delta[S - 2] else S - 2
    if delta[end] == -np.inf:
        raise InfeasibleAlignmentError("every alignment of the target has zero probability")

    states = [0] * T
    s = end
    for t in range(T - 1, -1, -1):
        states[t] = s
        s -= int(back[t, s])
    labels = tuple(int(ext[s]) for s in states)

    total = 0.0
    for t, label in enumerate(labels):
        total += float(lp[t, label])

    firsts, lasts = [-1] * len(target), [-1] * len(target)
    for t, s in enumerate(states):
        if s % 2:
            k = s // 2
            if firsts[k] < 0:
                firsts[k] = t
            lasts[k] = t
    return AlignmentPath(labels, total, tuple(firsts), tuple(lasts))


def ctc_log_likelihood(post: LogPosteriors, vocab: Vocabulary, target: Sequence[int]) -> float:
    """Log of the total probability of all frame paths collapsing to ``target``."""
    _check_dims(post, vocab)
    blank = vocab.blank_index
    target = [int(x) for x in target]
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    S = ext.size
    if not target:
        return float(post.values[:, blank].sum())
    if post.frames == 0:
        return NEG_INF
    can_skip = np.zeros(S, dtype=bool)
    can_skip[3::2] = ext[3::2] != ext[1:-2:2]
    lp = post.values
    alpha = np.full(S, -np.inf)
    alpha[0] = lp[0, blank]
    alpha[1] = lp[0, ext[1]]
    for t in range(1, post.frames):
        prev1 = np.concatenate(([-np.inf], alpha[:-1]))
        prev2 = np.concatenate(([-np.inf, -np.inf], alpha[:-2]))
        prev2[~can_skip] = -np.inf
        alpha = np.logaddexp(np.logaddexp(alpha, prev1), prev2) + lp[t, ext]
    return float(np.logaddexp(alpha[-1], alpha[-2]))


def spans_to_words(
    spans: Sequence[tuple[int, int, int]],
    vocab: Vocabulary,
    frame_duration_s: float,
    offset_frames: int = 0,
) -> list[TimedWord]:
    """Turn ``(token, first_frame, last_frame)`` spans into timed words.

    A word runs from its first token's first frame to the end of its last
    token's last frame.
    """
    words = []
    for text, first, last in vocab.detokenize([s[0] for s in spans]):
        start = (spans[first][1] + offset_frames) * frame_duration_s
        end = (spans[last][2] + 1 + offset_frames) * frame_duration_s
        words.append(TimedWord(text, start, end))
    return words


def align_tokens(post: LogPosteriors, vocab: Vocabulary, tokens: Sequence[int]) -> list[tuple[int, int, int]]:
    """Token spans for a decoded sequence, via forced alignment."""
    if not tokens:
        return []
    path = forced_align(post, vocab, tokens)
    return list(zip(tokens, path.token_frames, path.token_end_frames))
