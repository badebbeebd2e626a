"""Word Diarization Error Rate.

Only word pairs the alignment links (correct and substituted words) are
eligible. WDER is the share of eligible words whose hypothesis speaker,
under the best one-to-one mapping of hypothesis labels onto reference
labels, differs from the reference speaker.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import permutations
from math import perm
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .align import CORRECT, SUBSTITUTION, AlignmentOp, align_words
from .normalize import NormalizationConfig, normalize
from .transcript import TimedWord, Transcript

# exhaustive search when there are at most this many injective mappings
EXHAUSTIVE_LIMIT = 100_000


class WderError(ValueError):
    pass


@dataclass(frozen=True)
class SpeakerMapping:
    pairs: tuple[tuple[str, str], ...]  # (hyp label, ref label), sorted

    def __post_init__(self) -> None:
        pairs = tuple(sorted(self.pairs))
        hyps = [h for h, _ in pairs]
        refs = [r for _, r in pairs]
        if len(set(hyps)) != len(hyps) or len(set(refs)) != len(refs):
            raise ValueError("speaker mapping must be one-to-one")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_dict(cls, mapping: Mapping[str, str]) -> "SpeakerMapping":
        return cls(tuple(mapping.items()))

    def as_dict(self) -> dict[str, str]:
        return dict(self.pairs)

    def get(self, hyp_label: str) -> str | None:
        return self.as_dict().get(hyp_label)


@dataclass(frozen=True)
class WderScore:
    eligible_words: int
    speaker_errors: int
    excluded_words: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.speaker_errors <= self.eligible_words:
            raise ValueError("speaker_errors must lie in [0, eligible_words]")

    @property
    def wder(self) -> float:
        if self.eligible_words == 0:
            raise WderError("WDER undefined without eligible words")
        return self.speaker_errors / self.eligible_words

    def to_dict(self) -> dict:
        return {
            "eligible_words": self.eligible_words,
            "speaker_errors": self.speaker_errors,
            "excluded_words": self.excluded_words,
            "wder": round(self.wder, 4),
        }


def _label(item) -> str | None:
    return item.speaker if isinstance(item, TimedWord) else item


def _eligible_pairs(ops, ref, hyp) -> tuple[list[tuple[str, str]], int]:
    pairs, excluded = [], 0
    for op in ops:
        if op.kind not in (CORRECT, SUBSTITUTION):
            continue
        r, h = _label(ref[op.ref_index]), _label(hyp[op.hyp_index])
        if r is None or h is None:
            excluded += 1
        else:
            pairs.append((h, r))
    return pairs, excluded


def cooccurrence(pairs: Sequence[tuple[str, str]]) -> tuple[list[str], list[str], np.ndarray]:
    """Hyp labels, ref labels (both sorted) and the count matrix hyp x ref."""
    hyp_labels = sorted({h for h, _ in pairs})
    ref_labels = sorted({r for _, r in pairs})
    hi = {h: i for i, h in enumerate(hyp_labels)}
    ri = {r: i for i, r in enumerate(ref_labels)}
    counts = np.zeros((len(hyp_labels), len(ref_labels)), dtype=np.int64)
    for (h, r), n in Counter(pairs).items():
        counts[hi[h], ri[r]] = n
    return hyp_labels, ref_labels, counts


def _exhaustive(counts: np.ndarray) -> list[tuple[int, int]]:
    n_h, n_r = counts.shape
    best, best_pairs = -1, []
    if n_h <= n_r:
        for cols in permutations(range(n_r), n_h):
            total = sum(int(counts[i, c]) for i, c in enumerate(cols))
            if total > best:
                best, best_pairs = total, list(enumerate(cols))
    else:
        for rows in permutations(range(n_h), n_r):
            total = sum(int(counts[r, j]) for j, r in enumerate(rows))
            if total > best:
                best, best_pairs = total, [(r, j) for j, r in enumerate(rows)]
    return best_pairs


def _assignment(counts: np.ndarray) -> list[tuple[int, int]]:
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return list(zip(rows.tolist(), cols.tolist()))


def optimal_speaker_map(
    ops: Sequence[AlignmentOp],
    ref: Sequence,
    hyp: Sequence,
    method: str = "auto",
) -> SpeakerMapping:
    """One-to-one hyp->ref label mapping maximizing speaker-correct eligible words.

    ``ref``/``hyp`` hold :class:`TimedWord` objects or bare speaker labels.
    ``method`` is ``"exhaustive"``, ``"assignment"`` or ``"auto"`` (exhaustive
    while the number of candidate mappings stays small).
    """
    pairs, _ = _eligible_pairs(ops, ref, hyp)
    if not pairs:
        raise WderError("no eligible words with speakers on both sides")
    hyp_labels, ref_labels, counts = cooccurrence(pairs)
    if method == "auto":
        small = perm(max(counts.shape), min(counts.shape)) <= EXHAUSTIVE_LIMIT
        method = "exhaustive" if small else "assignment"
    if method == "exhaustive":
        chosen = _exhaustive(counts)
    elif method == "assignment":
        chosen = _assignment(counts)
    else:
        raise ValueError(f"unknown mapping method {method!r}")
    return SpeakerMapping(
        tuple((hyp_labels[i], ref_labels[j]) for i, j in chosen if counts[i, j] > 0)
    )


def compute_wder(
    ops: Sequence[AlignmentOp], ref: Sequence, hyp: Sequence, mapping: SpeakerMapping
) -> WderScore:
    pairs, excluded = _eligible_pairs(ops, ref, hyp)
    if not pairs:
        raise WderError("no eligible words with speakers on both sides")
    table = mapping.as_dict()
    errors = sum(1 for h, r in pairs if table.get(h) != r)
    return WderScore(len(pairs), errors, excluded)


def pool(scores: Sequence[WderScore]) -> WderScore:
    """Word-weighted pooling across files."""
    if not scores:
        raise WderError("nothing to pool")
    return WderScore(
        sum(s.eligible_words for s in scores),
        sum(s.speaker_errors for s in scores),
        sum(s.excluded_words for s in scores),
    )


def _expand(transcript: Transcript, config: NormalizationConfig | None) -> tuple[list[str], list[str | None]]:
    words, speakers = [], []
    for w in transcript.words:
        for token in normalize(w.text, config):
            words.append(token)
            speakers.append(w.speaker)
    return words, speakers


def score_wder(
    ref: Transcript, hyp: Transcript, config: NormalizationConfig | None = None
) -> tuple[WderScore, SpeakerMapping]:
    """Normalize, align, map speakers and score one file."""
    ref_words, ref_spk = _expand(ref, config)
    hyp_words, hyp_spk = _expand(hyp, config)
    ops = align_words(ref_words, hyp_words)
    mapping = optimal_speaker_map(ops, ref_spk, hyp_spk)
    return compute_wder(ops, ref_spk, hyp_spk, mapping), mapping
