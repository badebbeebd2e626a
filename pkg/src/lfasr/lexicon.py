"""Lexicon-constrained CTC beam search with unigram shallow fusion.

A unigram LM has no cross-word state, so composing lexicon and LM reduces to
walking a prefix trie of word spellings in lockstep with the CTC prefix
search: when a word's last token is reached the word's unigram log-prob is
added and the walk re-enters the root.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .ctc import BeamConfig, DecodeError, _check_dims, align_tokens
from .logmath import NEG_INF, log_add, logsumexp
from .transcript import WORD_DELIMITERS, FormatError, LogPosteriors, TimedWord, Transcript, Vocabulary

ROOT = 0
OOV = -1


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class LexiconEntry:
    word: str
    spelling: tuple[int, ...]
    logp: float


@dataclass(frozen=True)
class UnigramLexicon:
    entries: tuple[LexiconEntry, ...]
    oov_logp: float = NEG_INF

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        for e in self.entries:
            if not e.spelling:
                raise LexiconError(f"empty spelling for {e.word!r}")
            if e.logp > 1e-6:
                raise LexiconError(f"log-prob of {e.word!r} is positive")
        if self.entries and logsumexp(e.logp for e in self.entries) > 1e-6:
            raise LexiconError("unigram probabilities sum to more than one")

    @classmethod
    def from_text(cls, text: str, vocab: Vocabulary, oov_logp: float = NEG_INF) -> "UnigramLexicon":
        """Parse ``word <tab> logp <tab> token token ...`` lines."""
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError("expected 'word<TAB>logp<TAB>tokens'", line=lineno)
            word, logp, spelling = parts
            try:
                lp = float(logp)
            except ValueError:
                raise FormatError(f"bad log-prob {logp!r}", line=lineno) from None
            try:
                ids = tuple(vocab.index(tok) for tok in spelling.split())
            except KeyError as exc:
                raise FormatError(str(exc.args[0]), line=lineno) from None
            if vocab.blank_index in ids:
                raise FormatError("spelling contains the blank token", line=lineno)
            entries.append(LexiconEntry(word.strip(), ids, lp))
        try:
            return cls(tuple(entries), oov_logp)
        except LexiconError as exc:
            raise FormatError(str(exc)) from None


class LexiconTrie:
    """Prefix tree over spellings. Node 0 is the root.

    ``terminals[n]`` lists the ``(word, logp)`` pairs spelled by the path to
    ``n``, best first (higher log-prob, then word).
    """

    def __init__(self, oov_logp: float = NEG_INF):
        self.children: list[dict[int, int]] = [{}]
        self.terminals: list[list[tuple[str, float]]] = [[]]
        self.depth: list[int] = [0]
        self.oov_logp = oov_logp

    def __len__(self) -> int:
        return len(self.children)

    def best(self, node: int) -> tuple[str, float] | None:
        entries = self.terminals[node]
        return entries[0] if entries else None

    def lookup(self, spelling: Sequence[int]) -> int | None:
        node = ROOT
        for tok in spelling:
            node = self.children[node].get(tok)
            if node is None:
                return None
        return node

    @property
    def empty(self) -> bool:
        return len(self.children) == 1


def compile_trie(lexicon: UnigramLexicon, blank_index: int | None = None) -> LexiconTrie:
    trie = LexiconTrie(lexicon.oov_logp)
    seen = set()
    for e in lexicon.entries:
        if (e.word, e.spelling) in seen:
            raise LexiconError(f"duplicate lexicon entry {e.word!r} {list(e.spelling)}")
        seen.add((e.word, e.spelling))
        if blank_index is not None and blank_index in e.spelling:
            raise LexiconError(f"spelling of {e.word!r} contains the blank")
        node = ROOT
        for tok in e.spelling:
            nxt = trie.children[node].get(tok)
            if nxt is None:
                nxt = len(trie.children)
                trie.children.append({})
                trie.terminals.append([])
                trie.depth.append(trie.depth[node] + 1)
                trie.children[node][tok] = nxt
            node = nxt
        trie.terminals[node].append((e.word, e.logp))
    for entries in trie.terminals:
        entries.sort(key=lambda we: (-we[1], we[0]))
    return trie


@dataclass(frozen=True)
class LexiconHypothesis:
    words: tuple[str, ...]
    word_spans: tuple[tuple[int, int], ...]  # inclusive token positions
    tokens: tuple[int, ...]
    logp_ctc: float
    lm_logp: float
    score: float


# search state key: (tokens, words, spans, node, word_start)
_Key = tuple


def lexicon_beam_search_nbest(
    post: LogPosteriors,
    vocab: Vocabulary,
    trie: LexiconTrie,
    lm_weight: float = 1.0,
    config: BeamConfig | None = None,
) -> list[LexiconHypothesis]:
    """Word-level n-best list, ranked by ``logp_ctc + lm_weight * lm_logp``."""
    config = config or BeamConfig()
    _check_dims(post, vocab)
    if lm_weight < 0:
        raise ValueError("lm_weight must be >= 0")
    oov = trie.oov_logp > NEG_INF
    if trie.empty and not oov:
        raise LexiconError("empty lexicon with a closed vocabulary: nothing is decodable")

    blank = vocab.blank_index
    delimiters = {i for i, t in enumerate(vocab.tokens) if t in WORD_DELIMITERS}
    # tokens an OOV word cannot run through: they end or begin a word
    boundaries = delimiters | {i for i, t in enumerate(vocab.tokens) if t.startswith("▁")}

    def oov_word(tokens, start, end):
        words = vocab.detokenize([t for t in tokens[start:end + 1] if t not in delimiters])
        return "".join(w for w, _, _ in words)

    def pending_word(tokens, node, start):
        """Word that ends at the current position, if the current node allows one."""
        if node == OOV:
            return oov_word(tokens, start, len(tokens) - 1), trie.oov_logp
        if node != ROOT:
            return trie.best(node)
        return None

    def successors(key: _Key, c: int):
        tokens, words, spans, node, start = key
        new_tokens = tokens + (c,)
        pos = len(tokens)
        out = []
        if node == OOV:
            if c not in boundaries:
                out.append(((new_tokens, words, spans, OOV, start), 0.0))
        else:
            child = trie.children[node].get(c)
            if child is not None:
                out.append(((new_tokens, words, spans, child, pos if node == ROOT else start), 0.0))
            elif node == ROOT and c in delimiters:
                out.append(((new_tokens, words, spans, ROOT, start), 0.0))
            if node == ROOT and oov and c not in delimiters:
                out.append(((new_tokens, words, spans, OOV, pos), 0.0))
        done = pending_word(tokens, node, start)
        if done is not None:
            word, logp = done
            w2 = words + (word,)
            s2 = spans + ((start, pos - 1),)
            if c in delimiters:
                out.append(((new_tokens, w2, s2, ROOT, pos + 1), logp))
            else:
                child = trie.children[ROOT].get(c)
                if child is not None:
                    out.append(((new_tokens, w2, s2, child, pos), logp))
                if oov:
                    out.append(((new_tokens, w2, s2, OOV, pos), logp))
        return out

    # key -> [logp_blank, logp_nonblank, lm_logp]
    beam: dict[_Key, list[float]] = {((), (), (), ROOT, 0): [0.0, NEG_INF, 0.0]}

    def rank(item):
        key, (pb, pnb, lm) = item
        return (-(log_add(pb, pnb) + lm_weight * lm), key[1], key[0], key[2])

    for t in range(post.frames):
        row = post.values[t].tolist()
        candidates = [
            c for c in range(len(row)) if c != blank and row[c] >= config.prune_log_threshold
        ]
        nxt: dict[_Key, list[float]] = {}
        for key, (pb, pnb, lm) in beam.items():
            tokens = key[0]
            total = log_add(pb, pnb)
            entry = nxt.setdefault(key, [NEG_INF, NEG_INF, lm])
            entry[0] = log_add(entry[0], total + row[blank])
            last = tokens[-1] if tokens else -1
            if last >= 0:
                entry[1] = log_add(entry[1], pnb + row[last])
            for c in candidates:
                base = (pb if c == last else total) + row[c]
                if base == NEG_INF:
                    continue
                for new_key, word_lp in successors(key, c):
                    e = nxt.get(new_key)
                    if e is None:
                        e = nxt[new_key] = [NEG_INF, NEG_INF, lm + word_lp]
                    e[1] = log_add(e[1], base)
        beam = dict(sorted(nxt.items(), key=rank)[: config.beam_size])

    finals: dict[tuple, LexiconHypothesis] = {}
    for key, (pb, pnb, lm) in beam.items():
        tokens, words, spans, node, start = key
        if node != ROOT:
            done = pending_word(tokens, node, start)
            if done is None:
                continue
            words = words + (done[0],)
            spans = spans + ((start, len(tokens) - 1),)
            lm += done[1]
        ctc = log_add(pb, pnb)
        hyp = LexiconHypothesis(words, spans, tokens, ctc, lm, ctc + lm_weight * lm)
        prev = finals.get((tokens, words))
        if prev is None or hyp.score > prev.score:
            finals[(tokens, words)] = hyp
    ranked = sorted(finals.values(), key=lambda h: (-h.score, h.words, h.tokens, h.word_spans))
    return ranked[: config.beam_size]


def lexicon_beam_search(
    post: LogPosteriors,
    vocab: Vocabulary,
    trie: LexiconTrie,
    lm_weight: float = 1.0,
    config: BeamConfig | None = None,
    file_id: str = "",
) -> Transcript:
    """Best word sequence with times taken from the Viterbi token alignment."""
    nbest = lexicon_beam_search_nbest(post, vocab, trie, lm_weight, config)
    if not nbest:
        return Transcript(file_id, ())
    return hypothesis_to_transcript(nbest[0], post, vocab, file_id)


def hypothesis_to_transcript(
    hyp: LexiconHypothesis,
    post: LogPosteriors,
    vocab: Vocabulary,
    file_id: str = "",
    offset_frames: int = 0,
) -> Transcript:
    spans = align_tokens(post, vocab, hyp.tokens)
    delimiters = {i for i, t in enumerate(vocab.tokens) if t in WORD_DELIMITERS}
    fd = post.frame_duration_s
    words = []
    for word, (a, b) in zip(hyp.words, hyp.word_spans):
        inner = [spans[p] for p in range(a, b + 1) if hyp.tokens[p] not in delimiters] or spans[a:b + 1]
        start = (inner[0][1] + offset_frames) * fd
        end = (inner[-1][2] + 1 + offset_frames) * fd
        words.append(TimedWord(word, start, end))
    return Transcript(file_id, tuple(words))


def lexicon_score(hyp: LexiconHypothesis, lm_weight: float) -> float:
    return hyp.logp_ctc + lm_weight * hyp.lm_logp


__all__ = [
    "LexiconEntry",
    "LexiconError",
    "LexiconHypothesis",
    "LexiconTrie",
    "UnigramLexicon",
    "compile_trie",
    "hypothesis_to_transcript",
    "lexicon_beam_search",
    "lexicon_beam_search_nbest",
    "lexicon_score",
]
