"""Word alignment and WER scoring for complete long-form transcripts.

Alignments minimize unit-cost edits (S, I, D); among minimum-edit alignments
the one with the most correct words is chosen, and remaining ties are broken
in the backtrace as correct > substitution > deletion > insertion. Both
criteria are folded into a single integer cost so that the full-matrix DP and
the linear-memory divide-and-conquer variant optimize the same objective and
therefore report the same (C, S, I, D) counts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .normalize import NormalizationConfig, normalize
from .transcript import Transcript

CORRECT = "correct"
SUBSTITUTION = "substitution"
INSERTION = "insertion"
DELETION = "deletion"

# above this many DP cells the divide-and-conquer path is used
MAX_QUADRATIC_CELLS = 4_000_000
# subproblems this small are solved with a full matrix
BASE_CELLS = 16_384


class AlignmentError(ValueError):
    pass


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentOp:
    kind: str
    ref_index: int | None = None
    hyp_index: int | None = None

    def __post_init__(self) -> None:
        both = self.ref_index is not None and self.hyp_index is not None
        if self.kind in (CORRECT, SUBSTITUTION) and not both:
            raise ValueError(f"{self.kind} needs both indices")
        if self.kind == INSERTION and (self.ref_index is not None or self.hyp_index is None):
            raise ValueError("insertion carries only hyp_index")
        if self.kind == DELETION and (self.hyp_index is not None or self.ref_index is None):
            raise ValueError("deletion carries only ref_index")
        if self.kind not in (CORRECT, SUBSTITUTION, INSERTION, DELETION):
            raise ValueError(f"unknown op kind {self.kind!r}")


class CellMeter:
    """Counts DP cells held at once, to check the memory bound of the linear variant."""

    def __init__(self) -> None:
        self.current = 0
        self.peak = 0

    def alloc(self, n: int) -> None:
        self.current += n
        self.peak = max(self.peak, self.current)

    def free(self, n: int) -> None:
        self.current -= n


def _encode(ref: Sequence[str], hyp: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    ids: dict[str, int] = {}
    a = np.fromiter((ids.setdefault(w, len(ids)) for w in ref), dtype=np.int64, count=len(ref))
    b = np.fromiter((ids.setdefault(w, len(ids)) for w in hyp), dtype=np.int64, count=len(hyp))
    return a, b


def _next_row(row: np.ndarray, x: int, b: np.ndarray, K: int, ramp: np.ndarray) -> np.ndarray:
    # diagonal (match -1 / substitution K) and vertical (deletion K) moves, then
    # horizontal insertions via a running minimum
    out = np.empty_like(row)
    out[0] = row[0] + K
    np.minimum(row[:-1] + np.where(b == x, -1, K), row[1:] + K, out=out[1:])
    return np.minimum.accumulate(out - ramp) + ramp


def _full_matrix(a: np.ndarray, b: np.ndarray, K: int) -> np.ndarray:
    m = b.size
    ramp = K * np.arange(m + 1, dtype=np.int64)
    D = np.empty((a.size + 1, m + 1), dtype=np.int64)
    D[0] = ramp
    for i in range(a.size):
        D[i + 1] = _next_row(D[i], int(a[i]), b, K, ramp)
    return D


def _backtrace(D: np.ndarray, a: np.ndarray, b: np.ndarray, K: int, i0: int = 0, j0: int = 0) -> list[tuple]:
    ops = []
    i, j = a.size, b.size
    while i > 0 or j > 0:
        cur = D[i, j]
        if i > 0 and j > 0:
            same = a[i - 1] == b[j - 1]
            diag = D[i - 1, j - 1]
            if same and diag - 1 == cur:
                ops.append((CORRECT, i0 + i - 1, j0 + j - 1))
                i, j = i - 1, j - 1
                continue
            if not same and diag + K == cur:
                ops.append((SUBSTITUTION, i0 + i - 1, j0 + j - 1))
                i, j = i - 1, j - 1
                continue
        if i > 0 and D[i - 1, j] + K == cur:
            ops.append((DELETION, i0 + i - 1, None))
            i -= 1
        else:
            ops.append((INSERTION, None, j0 + j - 1))
            j -= 1
    ops.reverse()
    return ops


def _cost_K(n: int, m: int) -> int:
    # one edit must outweigh any number of matches
    return min(n, m) + 1


def align_quadratic(ref: Sequence[str], hyp: Sequence[str]) -> list[AlignmentOp]:
    """Full-matrix alignment (O(|ref|·|hyp|) memory)."""
    a, b = _encode(ref, hyp)
    K = _cost_K(a.size, b.size)
    D = _full_matrix(a, b, K)
    return [AlignmentOp(*op) for op in _backtrace(D, a, b, K)]


def _hirschberg(a: np.ndarray, b: np.ndarray, i0: int, j0: int, K: int, meter: CellMeter, out: list) -> None:
    n, m = a.size, b.size
    if n == 0:
        out.extend((INSERTION, None, j0 + j) for j in range(m))
        return
    if m == 0:
        out.extend((DELETION, i0 + i, None) for i in range(n))
        return
    if (n + 1) * (m + 1) <= BASE_CELLS or n == 1 or m == 1:
        if min(n, m) == 1 and (n + 1) * (m + 1) > BASE_CELLS:
            _align_single(a, b, i0, j0, K, out)
            return
        cells = (n + 1) * (m + 1)
        meter.alloc(cells)
        D = _full_matrix(a, b, K)
        out.extend(_backtrace(D, a, b, K, i0, j0))
        del D
        meter.free(cells)
        return

    if n < m:
        # split along the longer sequence so that rows span the shorter one
        sub: list = []
        _hirschberg(b, a, j0, i0, K, meter, sub)
        swap = {INSERTION: DELETION, DELETION: INSERTION}
        out.extend((swap.get(kind, kind), j, i) for kind, i, j in sub)
        return

    mid = n // 2
    ramp = K * np.arange(m + 1, dtype=np.int64)
    # live rows: forward, backward, the row being built, their sum
    meter.alloc(4 * (m + 1))
    fwd = ramp.copy()
    for x in a[:mid]:
        fwd = _next_row(fwd, int(x), b, K, ramp)
    b_rev = b[::-1]
    bwd = ramp.copy()
    for x in a[mid:][::-1]:
        bwd = _next_row(bwd, int(x), b_rev, K, ramp)
    split = int(np.argmin(fwd + bwd[::-1]))
    del fwd, bwd
    meter.free(4 * (m + 1))

    _hirschberg(a[:mid], b[:split], i0, j0, K, meter, out)
    _hirschberg(a[mid:], b[split:], i0 + mid, j0 + split, K, meter, out)


def _align_single(a: np.ndarray, b: np.ndarray, i0: int, j0: int, K: int, out: list) -> None:
    """Exact alignment when one side has a single word (O(1) DP memory)."""
    if a.size == 1:
        x, others, swap = int(a[0]), b, False
    else:
        x, others, swap = int(b[0]), a, True
    hits = np.nonzero(others == x)[0]
    pos = int(hits[0]) if hits.size else 0
    kind = CORRECT if hits.size else SUBSTITUTION
    for k in range(others.size):
        if k == pos:
            out.append((kind, i0 + (0 if not swap else k), j0 + (k if not swap else 0)))
        elif not swap:
            out.append((INSERTION, None, j0 + k))
        else:
            out.append((DELETION, i0 + k, None))


def align_linear(ref: Sequence[str], hyp: Sequence[str], meter: CellMeter | None = None) -> list[AlignmentOp]:
    """Divide-and-conquer alignment holding O(min(|ref|, |hyp|)) DP cells."""
    a, b = _encode(ref, hyp)
    out: list = []
    _hirschberg(a, b, 0, 0, _cost_K(a.size, b.size), meter or CellMeter(), out)
    return [AlignmentOp(*op) for op in out]


def align_words(
    ref: Sequence[str], hyp: Sequence[str], max_cells: int = MAX_QUADRATIC_CELLS
) -> list[AlignmentOp]:
    """Minimum-edit alignment of two word lists.

    >>> [op.kind for op in align_words("the cat sat".split(), "the cat".split())]
    ['correct', 'correct', 'deletion']
    """
    if (len(ref) + 1) * (len(hyp) + 1) > max_cells:
        return align_linear(ref, hyp)
    return align_quadratic(ref, hyp)


def op_counts(ops: Iterable[AlignmentOp]) -> tuple[int, int, int, int]:
    """(C, S, I, D) counts."""
    c = s = i = d = 0
    for op in ops:
        if op.kind == CORRECT:
            c += 1
        elif op.kind == SUBSTITUTION:
            s += 1
        elif op.kind == INSERTION:
            i += 1
        else:
            d += 1
    return c, s, i, d


@dataclass(frozen=True)
class FileScore:
    file_id: str
    ref_words: int
    correct: int
    substitutions: int
    insertions: int
    deletions: int

    def __post_init__(self) -> None:
        if self.ref_words != self.correct + self.substitutions + self.deletions:
            raise ValueError("ref_words must equal C + S + D")

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        if self.ref_words == 0:
            raise ScoringError(f"{self.file_id}: WER undefined for an empty reference")
        return self.errors / self.ref_words

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wer"] = round(self.wer, 4)
        return d


@dataclass(frozen=True)
class SuiteReport:
    files: tuple[FileScore, ...]
    suite_name: str = ""
    total_ref_words: int = field(init=False)
    total_errors: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "files", tuple(self.files))
        object.__setattr__(self, "total_ref_words", sum(f.ref_words for f in self.files))
        object.__setattr__(self, "total_errors", sum(f.errors for f in self.files))

    @property
    def micro_wer(self) -> float:
        return self.total_errors / self.total_ref_words

    def to_dict(self) -> dict:
        return {
            "suite_name": self.suite_name,
            "files": [f.to_dict() for f in self.files],
            "total_ref_words": self.total_ref_words,
            "total_errors": self.total_errors,
            "correct": sum(f.correct for f in self.files),
            "substitutions": sum(f.substitutions for f in self.files),
            "insertions": sum(f.insertions for f in self.files),
            "deletions": sum(f.deletions for f in self.files),
            "micro_wer": round(self.micro_wer, 4),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def score_words(ref: Sequence[str], hyp: Sequence[str], file_id: str = "") -> tuple[FileScore, list[AlignmentOp]]:
    if not ref:
        raise ScoringError(f"{file_id or '<file>'}: reference is empty after normalization")
    ops = align_words(ref, hyp)
    c, s, i, d = op_counts(ops)
    return FileScore(file_id, len(ref), c, s, i, d), ops


def transcript_words(transcript: Transcript, config: NormalizationConfig | None = None) -> list[str]:
    return normalize(" ".join(transcript.texts), config)


def score_file(
    ref: Transcript, hyp: Transcript, config: NormalizationConfig | None = None
) -> FileScore:
    """Normalize both sides, align, and count."""
    score, _ = score_words(transcript_words(ref, config), transcript_words(hyp, config), ref.file_id)
    return score


def micro_average(scores: Sequence[FileScore], suite_name: str = "") -> SuiteReport:
    """Pool errors and reference words over the suite (not a mean of per-file WERs)."""
    if not scores:
        raise ScoringError("cannot average an empty suite")
    report = SuiteReport(tuple(scores), suite_name)
    if report.total_ref_words == 0:
        raise ScoringError("suite has no reference words")
    return report


def merge_reports(*reports: SuiteReport, suite_name: str = "") -> SuiteReport:
    return micro_average([f for r in reports for f in r.files], suite_name)


_TAGS = {CORRECT: "", SUBSTITUTION: "SUB", INSERTION: "INS", DELETION: "DEL"}


def check_ops(ref: Sequence[str], hyp: Sequence[str], ops: Sequence[AlignmentOp]) -> None:
    """Raise :class:`AlignmentError` unless ``ops`` is a valid alignment of ``ref``/``hyp``."""
    ri = hi = 0
    for k, op in enumerate(ops):
        if op.ref_index is not None:
            if op.ref_index != ri:
                raise AlignmentError(f"op {k}: expected ref index {ri}, got {op.ref_index}")
            ri += 1
        if op.hyp_index is not None:
            if op.hyp_index != hi:
                raise AlignmentError(f"op {k}: expected hyp index {hi}, got {op.hyp_index}")
            hi += 1
        if op.kind in (CORRECT, SUBSTITUTION) and ri <= len(ref) and hi <= len(hyp):
            same = ref[op.ref_index] == hyp[op.hyp_index]
            if same != (op.kind == CORRECT):
                raise AlignmentError(f"op {k}: {op.kind} between {ref[op.ref_index]!r} and {hyp[op.hyp_index]!r}")
    if ri != len(ref) or hi != len(hyp):
        raise AlignmentError(f"ops cover {ri}/{len(ref)} ref and {hi}/{len(hyp)} hyp words")


def side_by_side(ref: Sequence[str], hyp: Sequence[str], ops: Sequence[AlignmentOp]) -> str:
    """Two-column listing of an alignment; S/I/D rows are tagged."""
    check_ops(ref, hyp, ops)
    rows = [
        (
            ref[op.ref_index] if op.ref_index is not None else "*",
            hyp[op.hyp_index] if op.hyp_index is not None else "*",
            _TAGS[op.kind],
        )
        for op in ops
    ]
    width = max([len("REF")] + [len(r) for r, _, _ in rows])
    lines = [f"{'REF':<{width}}  HYP"]
    for r, h, tag in rows:
        lines.append(f"{r:<{width}}  {h:<{width}}  {tag}".rstrip())
    c, s, i, d = op_counts(ops)
    wer = f"{(s + i + d) / len(ref):.4f}" if ref else "n/a"
    lines.append(f"C={c} S={s} I={i} D={d} WER={wer}")
    return "\n".join(lines) + "\n"
