"""Overlapping chunk plans and seam stitching for long posterior streams.

Adjacent chunks share ``overlap_frames`` frames. At each seam the words the
two chunks produced inside the shared window are matched by a longest common
subsequence (same text, intersecting times); the transcript switches from the
left chunk to the right one at the middle matched word. When the chunks agree
on fewer than ``min_agreement_words`` words, both sides are cut at the
window's temporal midpoint instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .transcript import TimedWord, Transcript

DEFAULT_CHUNK_S = 20.0
DEFAULT_OVERLAP_S = 2.0
DEFAULT_MIN_AGREEMENT = 3

_EPS = 1e-9


class StitchError(ValueError):
    pass


@dataclass(frozen=True)
class ChunkSpec:
    index: int
    start_frame: int
    end_frame: int
    left_overlap_frames: int = 0
    right_overlap_frames: int = 0

    def __post_init__(self) -> None:
        if not self.start_frame < self.end_frame:
            raise ValueError(f"chunk {self.index}: empty frame range")
        length = self.end_frame - self.start_frame
        if not 0 <= self.left_overlap_frames <= length or not 0 <= self.right_overlap_frames <= length:
            raise ValueError(f"chunk {self.index}: overlap exceeds chunk length")


@dataclass(frozen=True)
class ChunkResult:
    spec: ChunkSpec
    words: tuple[TimedWord, ...]
    frame_duration_s: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "words", tuple(self.words))
        lo = self.spec.start_frame * self.frame_duration_s - _EPS
        hi = self.spec.end_frame * self.frame_duration_s + _EPS
        for w in self.words:
            if not w.timed:
                raise ValueError(f"chunk {self.spec.index}: word {w.text!r} has no times")
            if w.start_s < lo or w.end_s > hi:
                raise ValueError(
                    f"chunk {self.spec.index}: word {w.text!r} [{w.start_s}, {w.end_s}] "
                    f"outside the chunk span [{lo}, {hi}]"
                )


def plan_chunks(total_frames: int, chunk_frames: int, overlap_frames: int) -> list[ChunkSpec]:
    """Tile ``[0, total_frames)`` with stride ``chunk_frames - overlap_frames``.

    >>> [(c.start_frame, c.end_frame) for c in plan_chunks(100, 40, 10)]
    [(0, 40), (30, 70), (60, 100), (90, 100)]
    """
    if total_frames < 0:
        raise ValueError("total_frames must be >= 0")
    if overlap_frames < 0 or chunk_frames <= overlap_frames:
        raise ValueError("need chunk_frames > overlap_frames >= 0")
    stride = chunk_frames - overlap_frames
    bounds = [(s, min(s + chunk_frames, total_frames)) for s in range(0, total_frames, stride)]
    specs = []
    for i, (start, end) in enumerate(bounds):
        left = max(0, bounds[i - 1][1] - start) if i else 0
        right = max(0, end - bounds[i + 1][0]) if i + 1 < len(bounds) else 0
        specs.append(ChunkSpec(i, start, end, min(left, end - start), min(right, end - start)))
    return specs


def _intersects(a: TimedWord, b: TimedWord) -> bool:
    if a.start_s == a.end_s or b.start_s == b.end_s:
        return max(a.start_s, b.start_s) <= min(a.end_s, b.end_s)
    return max(a.start_s, b.start_s) < min(a.end_s, b.end_s)


def _lcs(left: Sequence[TimedWord], right: Sequence[TimedWord]) -> list[tuple[int, int]]:
    """Matched index pairs of a longest common subsequence; earliest matches win ties."""
    n, m = len(left), len(right)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if left[i].text == right[j].text and _intersects(left[i], right[j]):
                table[i][j] = table[i + 1][j + 1] + 1
            else:
                table[i][j] = max(table[i + 1][j], table[i][j + 1])
    pairs = []
    i = j = 0
    while i < n and j < m:
        if left[i].text == right[j].text and _intersects(left[i], right[j]) and table[i][j] == table[i + 1][j + 1] + 1:
            pairs.append((i, j))
            i += 1
            j += 1
        elif table[i + 1][j] >= table[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


def _center(w: TimedWord) -> float:
    return 0.5 * (w.start_s + w.end_s)


def stitch(
    results: Sequence[ChunkResult],
    min_agreement_words: int = DEFAULT_MIN_AGREEMENT,
    file_id: str = "",
) -> Transcript:
    """Fold chunk transcripts left to right into one transcript."""
    if not results:
        return Transcript(file_id, ())
    indices = [r.spec.index for r in results]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise StitchError(f"chunk results must be sorted by unique index, got {indices}")

    merged: list[TimedWord] = list(results[0].words)
    for prev, cur in zip(results, results[1:]):
        fd = cur.frame_duration_s
        win_start = cur.spec.start_frame * fd
        win_end = prev.spec.end_frame * fd
        if win_end <= win_start + _EPS:
            merged.extend(cur.words)
            continue

        cut = len(merged)
        while cut > 0 and merged[cut - 1].end_s > win_start:
            cut -= 1
        left_win = merged[cut:]
        n_right = 0
        while n_right < len(cur.words) and cur.words[n_right].start_s < win_end:
            n_right += 1
        right_win = cur.words[:n_right]

        pairs = _lcs(left_win, right_win)
        if pairs and len(pairs) >= min_agreement_words:
            li, rj = pairs[len(pairs) // 2]
            merged = merged[: cut + li + 1]
            tail = list(cur.words[rj + 1:])
        else:
            mid = 0.5 * (win_start + win_end)
            merged = merged[:cut] + [w for w in left_win if _center(w) < mid]
            tail = [w for w in cur.words if _center(w) >= mid]
        # keep start times non-decreasing across the seam
        floor = merged[-1].start_s if merged else 0.0
        merged.extend(w for w in tail if w.start_s >= floor)
    return Transcript(file_id, tuple(merged))
