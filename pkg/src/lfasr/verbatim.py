"""Rule-based disfluency detection and continuous verbatimicity filtering.

Level 1.0 keeps every word. Level 0.0 removes every detected disfluency,
repeating detection until nothing is left to find. In between, spans are
removed in severity order until the removed share of disfluent words reaches
``1 - level``. Severity order is category first (filled pauses, repeated
words, repeated phrases, false starts), then spans sitting in larger
disfluent clusters, then position.

Discourse markers ("you know", "kind of", "sort of", "like") are never
removed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from .normalize import NormalizationConfig, normalize
from .transcript import Transcript

FILLED_PAUSE = "filled_pause"
REPEATED_WORD = "repeated_word"
REPEATED_PHRASE = "repeated_phrase"
FALSE_START = "false_start"
CATEGORIES = (FILLED_PAUSE, REPEATED_WORD, REPEATED_PHRASE, FALSE_START)

DEFAULT_FILLED_PAUSES = frozenset({"um", "uh", "uhm", "er", "hmm", "mm"})
DISCOURSE_MARKERS = (("you", "know"), ("kind", "of"), ("sort", "of"), ("like",))

# Words that typically open a clause; a false start is one of these cut off
# by a restart that itself opens a clause.
CLAUSE_STARTERS = frozenset(
    """i you he she we they it it's i'm i've i'll i'd you're you've we're we've
    they're they've he's she's that's there's this that""".split()
)
AUXILIARIES = frozenset(
    "am is are was were have has had will would can could do does did don't didn't".split()
)


@dataclass(frozen=True)
class DisfluencySpan:
    start_word_index: int
    end_word_index: int
    category: str
    severity_rank: int = 0

    @property
    def length(self) -> int:
        return self.end_word_index - self.start_word_index


@dataclass(frozen=True)
class VerbatimicityRules:
    filled_pause_lexicon: frozenset[str] = field(default_factory=lambda: DEFAULT_FILLED_PAUSES)
    max_phrase_len: int = 4
    removal_order: tuple[str, ...] = CATEGORIES
    detect_false_starts: bool = True

    def __post_init__(self) -> None:
        if self.max_phrase_len < 1:
            raise ValueError("max_phrase_len must be >= 1")
        if sorted(self.removal_order) != sorted(CATEGORIES):
            raise ValueError(f"removal_order must be a permutation of {CATEGORIES}")
        object.__setattr__(self, "filled_pause_lexicon", frozenset(self.filled_pause_lexicon))


def marker_positions(words: Sequence[str]) -> set[int]:
    protected = set()
    for i in range(len(words)):
        for marker in DISCOURSE_MARKERS:
            if tuple(words[i:i + len(marker)]) == marker:
                protected.update(range(i, i + len(marker)))
    return protected


def _candidates(words: Sequence[str], rules: VerbatimicityRules) -> list[tuple[int, int, str]]:
    n = len(words)
    found = []
    for i, w in enumerate(words):
        if w in rules.filled_pause_lexicon:
            found.append((i, i + 1, FILLED_PAUSE))
    i = 0
    while i < n:
        j = i
        while j + 1 < n and words[j + 1] == words[i]:
            j += 1
        if j > i:
            found.append((i, j, REPEATED_WORD))
        i = j + 1
    for size in range(2, rules.max_phrase_len + 1):
        for i in range(n - 2 * size + 1):
            if words[i:i + size] == words[i + size:i + 2 * size]:
                found.append((i, i + size, REPEATED_PHRASE))
    return found


def _resolve(cands: list[tuple[int, int, str]], protected: set[int]) -> list[tuple[int, int, str]]:
    taken: set[int] = set()
    kept = []
    for start, end, cat in sorted(cands, key=lambda c: (c[0] - c[1], c[0], CATEGORIES.index(c[2]))):
        cover = set(range(start, end))
        if cover & protected or cover & taken:
            continue
        taken |= cover
        kept.append((start, end, cat))
    return kept


def _false_starts(words: Sequence[str], spans, protected: set[int]) -> list[tuple[int, int, str]]:
    used = {k for s, e, _ in spans for k in range(s, e)}
    restarts = sorted({s for s, _, cat in spans if cat in (REPEATED_WORD, REPEATED_PHRASE)})
    out = []
    for k in restarts:
        if words[k] not in CLAUSE_STARTERS:
            continue
        if k >= 1 and words[k - 1] in CLAUSE_STARTERS and words[k - 1] != words[k]:
            span = (k - 1, k)
        elif k >= 2 and words[k - 2] in CLAUSE_STARTERS and words[k - 1] in AUXILIARIES:
            span = (k - 2, k)
        else:
            continue
        cover = set(range(*span))
        if cover & used or cover & protected:
            continue
        used |= cover
        out.append((span[0], span[1], FALSE_START))
    return out


def _clusters(spans) -> dict[tuple[int, int], int]:
    """Size of the contiguous disfluent run each span belongs to."""
    ordered = sorted((s, e) for s, e, _ in spans)
    sizes: dict[tuple[int, int], int] = {}
    run: list[tuple[int, int]] = []
    for s, e in ordered + [(None, None)]:
        if run and (s is None or s > run[-1][1]):
            size = sum(b - a for a, b in run)
            sizes.update({r: size for r in run})
            run = []
        if s is not None:
            run.append((s, e))
    return sizes


def detect_disfluencies(
    words: Sequence[str], rules: VerbatimicityRules | None = None
) -> list[DisfluencySpan]:
    """Resolved, non-overlapping disfluency spans, listed in removal order.

    >>> [(s.start_word_index, s.category) for s in detect_disfluencies("um i think".split())]
    [(0, 'filled_pause')]
    """
    rules = rules or VerbatimicityRules()
    words = list(words)
    protected = marker_positions(words)
    spans = _resolve(_candidates(words, rules), protected)
    if rules.detect_false_starts:
        spans += _false_starts(words, spans, protected)
    clusters = _clusters(spans)
    order = {cat: i for i, cat in enumerate(rules.removal_order)}
    spans.sort(key=lambda s: (order[s[2]], -clusters[(s[0], s[1])], s[0]))
    return [DisfluencySpan(s, e, cat, rank) for rank, (s, e, cat) in enumerate(spans)]


def removal_mask(words: Sequence[str], level: float, rules: VerbatimicityRules | None = None) -> list[bool]:
    """``True`` for each word that survives at ``level``."""
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"verbatimicity level must be in [0, 1], got {level}")
    rules = rules or VerbatimicityRules()
    keep = [True] * len(words)
    if level >= 1.0:
        return keep
    if level <= 0.0:
        alive = list(range(len(words)))
        while True:
            spans = detect_disfluencies([words[i] for i in alive], rules)
            if not spans:
                return keep
            drop = {alive[k] for s in spans for k in range(s.start_word_index, s.end_word_index)}
            for i in drop:
                keep[i] = False
            alive = [i for i in alive if i not in drop]

    spans = detect_disfluencies(words, rules)
    total = sum(s.length for s in spans)
    removed = 0
    for s in spans:
        if removed >= (1.0 - level) * total:
            break
        for k in range(s.start_word_index, s.end_word_index):
            keep[k] = False
        removed += s.length
    return keep


def filter_words(words: Sequence[str], level: float, rules: VerbatimicityRules | None = None) -> list[str]:
    return [w for w, k in zip(words, removal_mask(words, level, rules)) if k]


def _detection_view(transcript: Transcript, norm: NormalizationConfig) -> tuple[list[int], list[str]]:
    index, keys = [], []
    for i, w in enumerate(transcript.words):
        key = " ".join(normalize(w.text, norm))
        if key:
            index.append(i)
            keys.append(key)
    return index, keys


def apply_verbatimicity(
    transcript: Transcript,
    level: float,
    rules: VerbatimicityRules | None = None,
    norm: NormalizationConfig | None = None,
) -> Transcript:
    """Drop disfluent words from ``transcript`` for the given level.

    Detection runs on normalized word text; removals are mapped back onto the
    original words by index, so surviving words keep their text, times and
    speakers.
    """
    norm = norm or NormalizationConfig()
    index, keys = _detection_view(transcript, norm)
    mask = removal_mask(keys, level, rules)
    dropped = {index[k] for k, keep in enumerate(mask) if not keep}
    return replace(
        transcript, words=tuple(w for i, w in enumerate(transcript.words) if i not in dropped)
    )


def transcript_spans(
    transcript: Transcript,
    rules: VerbatimicityRules | None = None,
    norm: NormalizationConfig | None = None,
) -> list[DisfluencySpan]:
    """Detected spans with indices mapped back onto ``transcript.words``."""
    index, keys = _detection_view(transcript, norm or NormalizationConfig())
    out = []
    for s in detect_disfluencies(keys, rules):
        out.append(
            replace(s, start_word_index=index[s.start_word_index], end_word_index=index[s.end_word_index - 1] + 1)
        )
    return out
