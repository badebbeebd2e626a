"""Core data types and the on-disk formats they travel in.

Formats handled here:

* RVBP posterior binary (``read_posteriors`` / ``write_posteriors``)
* CTM time-marked words (``parse_ctm`` / ``format_ctm``)
* RTTM speaker segments (``parse_rttm`` / ``format_rttm``)
* the JSON transcript document (``transcript_to_json`` / ``transcript_from_json``)

plus ``attribute_speakers``, which merges diarization segments into a timed
transcript.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from typing import Any, Iterable, Sequence

import numpy as np

RVBP_MAGIC = b"RVBP"
RVBP_VERSION = 1
_RVBP_HEADER = struct.Struct("<4sIIII")

BLANK_MARKER = "<blk>"
WORD_DELIMITERS = frozenset({"|", "▁", "<space>", " "})
WORD_PREFIX = "▁"

ROW_TOLERANCE = 1e-4
MAX_LOGP = 1e-6

UNATTRIBUTED_POLICIES = ("unknown", "inherit")
UNKNOWN_SPEAKER = "unknown"


class FormatError(ValueError):
    """Malformed input. ``line`` or ``offset`` locate the problem when known."""

    def __init__(self, message: str, *, line: int | None = None, offset: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.offset = offset


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    """CTC label alphabet. ``tokens[blank_index]`` is the blank."""

    tokens: tuple[str, ...]
    blank_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) < 2:
            raise ValueError("vocabulary needs at least a blank and one token")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if not 0 <= self.blank_index < len(self.tokens):
            raise ValueError(f"blank_index {self.blank_index} out of range")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def index(self, token: str) -> int:
        try:
            return self._index[token]  # type: ignore[attr-defined]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        """One token per line; the line ``<blk>`` marks the blank."""
        tokens = [line.rstrip("\r\n") for line in text.splitlines()]
        while tokens and tokens[-1] == "":
            tokens.pop()
        if BLANK_MARKER not in tokens:
            raise FormatError(f"vocabulary has no {BLANK_MARKER} line")
        return cls(tuple(tokens), tokens.index(BLANK_MARKER))

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.tokens)

    def detokenize(self, ids: Sequence[int]) -> list[tuple[str, int, int]]:
        """Group a collapsed token sequence into words.

        Returns ``(word, first_pos, last_pos)`` where the positions index into
        ``ids``. Delimiter tokens (``|``, ``<space>``, a lone ``▁``) end a word;
        a token starting with ``▁`` opens a new one.
        """
        words: list[tuple[str, int, int]] = []
        buf: list[str] = []
        first = last = -1

        def close() -> None:
            nonlocal buf, first
            if buf and "".join(buf):
                words.append(("".join(buf), first, last))
            buf = []
            first = -1

        for pos, i in enumerate(ids):
            if i == self.blank_index:
                raise ValueError("detokenize expects a collapsed, blank-free sequence")
            tok = self.tokens[i]
            if tok in WORD_DELIMITERS:
                close()
                continue
            if tok.startswith(WORD_PREFIX):
                close()
                tok = tok[len(WORD_PREFIX):]
            if first < 0:
                first = pos
            buf.append(tok)
            last = pos
        close()
        return words

    def tokenize(self, words: Sequence[str]) -> list[int]:
        """Spell words with greedy longest-match over the vocabulary.

        Words are joined by the vocabulary's delimiter token when it has one,
        otherwise word starts are marked with ``▁``-prefixed pieces.
        """
        delim = next((t for t in ("|", "<space>", " ") if t in self._index), None)  # type: ignore[attr-defined]
        pieces = [
            t for i, t in enumerate(self.tokens)
            if i != self.blank_index and t not in WORD_DELIMITERS and t != BLANK_MARKER
        ]
        plain = sorted((t for t in pieces if not t.startswith(WORD_PREFIX)), key=len, reverse=True)
        prefixed = sorted((t for t in pieces if t.startswith(WORD_PREFIX)), key=len, reverse=True)
        if delim is None and not prefixed:
            raise ValueError("vocabulary has no word delimiter and no ▁-prefixed tokens")

        out: list[int] = []
        for n, word in enumerate(words):
            if delim is not None:
                if n:
                    out.append(self._index[delim])  # type: ignore[attr-defined]
                rest, candidates = word, plain
            else:
                rest, candidates = WORD_PREFIX + word, prefixed
            while rest:
                for tok in candidates:
                    if rest.startswith(tok):
                        out.append(self._index[tok])  # type: ignore[attr-defined]
                        rest = rest[len(tok):]
                        break
                else:
                    raise ValueError(f"cannot spell {word!r} with this vocabulary")
                candidates = plain
        return out


# ---------------------------------------------------------------------------
# Posteriors
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LogPosteriors:
    """T x V matrix of natural-log frame posteriors."""

    values: np.ndarray
    frame_duration_s: float = 0.04

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("posterior matrix must be 2-D (frames x vocab)")
        if not self.frame_duration_s > 0:
            raise ValueError("frame_duration_s must be positive")
        bad = first_bad_row(values)
        if bad is not None:
            raise ValueError(f"frame {bad}: row is not a normalized log-distribution")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, end: int) -> "LogPosteriors":
        return LogPosteriors(self.values[start:end], self.frame_duration_s)

    @classmethod
    def from_probs(cls, probs: Any, frame_duration_s: float = 0.04) -> "LogPosteriors":
        with np.errstate(divide="ignore"):
            return cls(np.log(np.asarray(probs, dtype=np.float64)), frame_duration_s)


def first_bad_row(values: np.ndarray) -> int | None:
    """Index of the first row violating the log-normalization invariant."""
    if values.shape[0] == 0:
        return None
    if np.isnan(values).any():
        return int(np.nonzero(np.isnan(values).any(axis=1))[0][0])
    too_big = (values > MAX_LOGP).any(axis=1)
    m = values.max(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        lse = m + np.log(np.exp(values - m[:, None]).sum(axis=1))
    bad = too_big | ~np.isfinite(lse) | (np.abs(lse) > ROW_TOLERANCE)
    idx = np.nonzero(bad)[0]
    return int(idx[0]) if idx.size else None


def read_posteriors(data: bytes) -> LogPosteriors:
    """Decode an RVBP byte string."""
    if len(data) < 4 or data[:4] != RVBP_MAGIC:
        raise FormatError("bad magic, expected b'RVBP'", offset=0)
    if len(data) < _RVBP_HEADER.size:
        raise FormatError(
            f"truncated header: {len(data)} of {_RVBP_HEADER.size} bytes", offset=len(data)
        )
    _, version, frames, vocab, frame_us = _RVBP_HEADER.unpack_from(data, 0)
    if version != RVBP_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if vocab < 2:
        raise FormatError(f"vocab size {vocab} < 2", offset=12)
    if frame_us == 0:
        raise FormatError("frame duration is zero", offset=16)
    expected = frames * vocab * 4
    payload = data[_RVBP_HEADER.size:]
    if len(payload) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes for {frames}x{vocab} floats, "
            f"got {len(payload)}",
            offset=_RVBP_HEADER.size + len(payload),
        )
    if len(payload) > expected:
        raise FormatError(
            f"{len(payload) - expected} trailing bytes after payload",
            offset=_RVBP_HEADER.size + expected,
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(frames, vocab)
    bad = first_bad_row(values)
    if bad is not None:
        raise FormatError(
            f"frame {bad} is not normalized (row log-sum-exp must be 0 within {ROW_TOLERANCE})",
            offset=_RVBP_HEADER.size + bad * vocab * 4,
        )
    return LogPosteriors(values, frame_us / 1e6)


def write_posteriors(post: LogPosteriors) -> bytes:
    frame_us = int(round(post.frame_duration_s * 1e6))
    header = _RVBP_HEADER.pack(RVBP_MAGIC, RVBP_VERSION, post.frames, post.vocab_size, frame_us)
    return header + np.ascontiguousarray(post.values, dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# Words, transcripts, segments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimedWord:
    text: str
    start_s: float | None = None
    end_s: float | None = None
    speaker: str | None = None
    confidence: float | None = None

    def __post_init__(self) -> None:
        if not self.text or any(c.isspace() for c in self.text):
            raise ValueError(f"word text must be non-empty without whitespace: {self.text!r}")
        if (self.start_s is None) != (self.end_s is None):
            raise ValueError("start_s and end_s must be given together")
        if self.start_s is not None and not 0 <= self.start_s <= self.end_s:
            raise ValueError(f"bad word times [{self.start_s}, {self.end_s}] for {self.text!r}")

    @property
    def timed(self) -> bool:
        return self.start_s is not None


@dataclass(frozen=True)
class Transcript:
    file_id: str
    words: tuple[TimedWord, ...] = ()
    channel: str = "1"

    def __post_init__(self) -> None:
        object.__setattr__(self, "words", tuple(self.words))
        last = -math.inf
        for i, w in enumerate(self.words):
            if w.start_s is not None:
                if w.start_s < last:
                    raise ValueError(f"word {i} ({w.text!r}) starts before the previous timed word")
                last = w.start_s

    @property
    def texts(self) -> list[str]:
        return [w.text for w in self.words]

    @classmethod
    def from_text(cls, file_id: str, text: str) -> "Transcript":
        return cls(file_id, tuple(TimedWord(t) for t in text.split()))


@dataclass(frozen=True)
class SpeakerSegment:
    file_id: str
    speaker: str
    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        if not 0 <= self.start_s < self.end_s:
            raise ValueError(f"bad segment times [{self.start_s}, {self.end_s})")


# ---------------------------------------------------------------------------
# CTM
# ---------------------------------------------------------------------------


def _is_comment(line: str) -> bool:
    return line.lstrip().startswith(";;")


def parse_ctm(text: str, file_id: str | None = None) -> Transcript:
    """Parse CTM records (``file channel start dur word [conf]``) for one file."""
    words = []
    seen_file = file_id
    channel = "1"
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or _is_comment(line):
            continue
        fields = line.split()
        if len(fields) not in (5, 6):
            raise FormatError(f"expected 5 or 6 CTM fields, got {len(fields)}", line=lineno)
        fid, chan, start, dur, word = fields[:5]
        try:
            start_s, dur_s = float(start), float(dur)
            conf = float(fields[5]) if len(fields) == 6 else None
        except ValueError:
            raise FormatError("non-numeric start/duration/confidence", line=lineno) from None
        if not (math.isfinite(start_s) and math.isfinite(dur_s)):
            raise FormatError("non-finite time", line=lineno)
        if dur_s < 0:
            raise FormatError(f"negative duration {dur}", line=lineno)
        if start_s < 0:
            raise FormatError(f"negative start time {start}", line=lineno)
        if seen_file is None:
            seen_file = fid
        elif fid != seen_file:
            raise FormatError(f"record for file {fid!r} in CTM of {seen_file!r}", line=lineno)
        channel = chan
        if words and words[-1].start_s > start_s:
            raise FormatError("records are not ordered by start time", line=lineno)
        words.append(TimedWord(word, start_s, start_s + dur_s, confidence=conf))
    return Transcript(seen_file or "", tuple(words), channel)


def _fmt_time(x: float) -> str:
    return f"{x:.3f}"


def format_ctm(transcript: Transcript) -> str:
    lines = []
    for w in transcript.words:
        if not w.timed:
            raise ValueError(f"cannot write untimed word {w.text!r} to CTM")
        fields = [
            transcript.file_id,
            transcript.channel,
            _fmt_time(w.start_s),
            _fmt_time(w.end_s - w.start_s),
            w.text,
        ]
        if w.confidence is not None:
            fields.append(f"{w.confidence:.4f}")
        lines.append(" ".join(fields) + "\n")
    return "".join(lines)


# ---------------------------------------------------------------------------
# RTTM
# ---------------------------------------------------------------------------


def parse_rttm(text: str) -> list[SpeakerSegment]:
    """SPEAKER records in file order; other record types are skipped."""
    segments = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields or fields[0] != "SPEAKER":
            continue
        if len(fields) < 8:
            raise FormatError(f"SPEAKER record needs at least 8 fields, got {len(fields)}", line=lineno)
        try:
            start, dur = float(fields[3]), float(fields[4])
        except ValueError:
            raise FormatError("non-numeric onset/duration", line=lineno) from None
        if not (math.isfinite(start) and math.isfinite(dur)) or start < 0 or dur <= 0:
            raise FormatError(f"invalid segment onset {fields[3]} / duration {fields[4]}", line=lineno)
        segments.append(SpeakerSegment(fields[1], fields[7], start, start + dur))
    return segments


def format_rttm(segments: Iterable[SpeakerSegment]) -> str:
    return "".join(
        f"SPEAKER {s.file_id} 1 {_fmt_time(s.start_s)} {_fmt_time(s.end_s - s.start_s)} "
        f"<NA> <NA> {s.speaker} <NA> <NA>\n"
        for s in segments
    )


# ---------------------------------------------------------------------------
# Transcript document (JSON)
# ---------------------------------------------------------------------------


def _word_to_dict(w: TimedWord) -> dict[str, Any]:
    d = {"text": w.text, "start_s": w.start_s, "end_s": w.end_s, "speaker": w.speaker}
    if w.confidence is not None:
        d["confidence"] = w.confidence
    return d


def transcript_to_dict(transcript: Transcript) -> dict[str, Any]:
    return {
        "file_id": transcript.file_id,
        "channel": transcript.channel,
        "words": [_word_to_dict(w) for w in transcript.words],
    }


def transcript_to_json(transcript: Transcript) -> str:
    return json.dumps(transcript_to_dict(transcript), indent=2, ensure_ascii=False) + "\n"


def transcript_from_dict(doc: dict[str, Any]) -> Transcript:
    if not isinstance(doc, dict) or "file_id" not in doc or "words" not in doc:
        raise FormatError("transcript document needs 'file_id' and 'words'")
    words = []
    for i, w in enumerate(doc["words"]):
        try:
            words.append(
                TimedWord(
                    w["text"],
                    None if w.get("start_s") is None else float(w["start_s"]),
                    None if w.get("end_s") is None else float(w["end_s"]),
                    w.get("speaker"),
                    None if w.get("confidence") is None else float(w["confidence"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"words[{i}]: {exc}") from None
    try:
        return Transcript(str(doc["file_id"]), tuple(words), str(doc.get("channel", "1")))
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def transcript_from_json(text: str) -> Transcript:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, line=exc.lineno) from None
    return transcript_from_dict(doc)


# ---------------------------------------------------------------------------
# Speaker attribution
# ---------------------------------------------------------------------------


def attribute_speakers(
    transcript: Transcript,
    segments: Sequence[SpeakerSegment],
    unattributed_policy: str = "inherit",
) -> Transcript:
    """Label every word with the speaker whose segment overlaps it the most.

    Ties go to the earlier-starting segment (then earlier end, then label) so
    the result does not depend on segment order. A zero-length word counts as
    overlapping the segments that contain its instant. Words touching no
    segment get ``"unknown"`` or the previous word's speaker, per
    ``unattributed_policy``.
    """
    if unattributed_policy not in UNATTRIBUTED_POLICIES:
        raise ValueError(f"unattributed_policy must be one of {UNATTRIBUTED_POLICIES}")
    for i, w in enumerate(transcript.words):
        if not w.timed:
            raise ValueError(f"word {i} ({w.text!r}) has no times; cannot attribute a speaker")

    order = sorted(segments, key=lambda s: (s.start_s, s.end_s, s.speaker))
    starts = np.array([s.start_s for s in order], dtype=np.float64)
    ends = np.array([s.end_s for s in order], dtype=np.float64)

    out = []
    previous = UNKNOWN_SPEAKER
    for w in transcript.words:
        speaker = None
        if order:
            overlap = np.minimum(ends, w.end_s) - np.maximum(starts, w.start_s)
            if w.end_s > w.start_s:
                eligible = overlap > 0
            else:
                eligible = (starts <= w.start_s) & (w.start_s < ends)
            if eligible.any():
                scored = np.where(eligible, overlap, -np.inf)
                # argmax returns the first maximum, i.e. the earliest-sorted segment
                speaker = order[int(np.argmax(scored))].speaker
        if speaker is None:
            speaker = previous if unattributed_policy == "inherit" else UNKNOWN_SPEAKER
        previous = speaker
        out.append(replace(w, speaker=speaker))
    return replace(transcript, words=tuple(out))
