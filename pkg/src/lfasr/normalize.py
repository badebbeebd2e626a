"""Text normalization applied symmetrically to references and hypotheses."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field

DEFAULT_FILLERS = frozenset({"um", "uh", "uhm", "er", "mm"})

# Kept when flanked by word characters on both sides: don't, long-form.
_INTRA_WORD = frozenset("'’-‐")


@dataclass(frozen=True)
class NormalizationConfig:
    lowercase: bool = True
    strip_punctuation: bool = True
    collapse_whitespace: bool = True
    filler_tokens: frozenset[str] = field(default_factory=lambda: DEFAULT_FILLERS)
    apply_filler_removal: bool = False

    def __post_init__(self) -> None:
        fillers = frozenset(self.filler_tokens)
        for f in fillers:
            if not f or f != f.lower():
                raise ValueError(f"filler token {f!r} must be non-empty lowercase")
        object.__setattr__(self, "filler_tokens", fillers)


def _is_word_char(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "LNM"


def is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def strip_punctuation(text: str) -> str:
    """Replace punctuation with spaces, keeping intra-word apostrophes and hyphens."""
    out = []
    last = len(text) - 1
    for i, ch in enumerate(text):
        if not is_punctuation(ch):
            out.append(ch)
        elif (
            ch in _INTRA_WORD
            and 0 < i < last
            and _is_word_char(text[i - 1])
            and _is_word_char(text[i + 1])
        ):
            out.append(ch)
        else:
            out.append(" ")
    return "".join(out)


def normalize(text: str, config: NormalizationConfig | None = None) -> list[str]:
    """Normalize ``text`` and split it into words.

    >>> normalize("Hello, World!")
    ['hello', 'world']
    """
    config = config or NormalizationConfig()
    if config.lowercase:
        text = text.lower()
    if config.strip_punctuation:
        text = strip_punctuation(text)
    words = text.split()
    if config.apply_filler_removal:
        words = [w for w in words if w.lower() not in config.filler_tokens]
    return words


def normalize_text(text: str, config: NormalizationConfig | None = None) -> str:
    """String form of :func:`normalize`.

    With ``collapse_whitespace`` off, the original spacing between surviving
    characters is left alone (filler removal still applies word by word).
    """
    config = config or NormalizationConfig()
    if config.collapse_whitespace:
        return " ".join(normalize(text, config))
    if config.lowercase:
        text = text.lower()
    if config.strip_punctuation:
        text = strip_punctuation(text)
    if config.apply_filler_removal:
        text = re.sub(
            r"\S+",
            lambda m: "" if m.group(0).lower() in config.filler_tokens else m.group(0),
            text,
        )
    return text
