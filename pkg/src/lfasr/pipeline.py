"""Glue between posteriors and transcripts: one decode call per mode, whole or chunked."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

from .chunking import ChunkResult, plan_chunks, stitch
from .ctc import (
    BeamConfig,
    align_tokens,
    attention_rescore,
    greedy_path,
    joint_decode,
    prefix_beam_search,
    spans_to_words,
    token_spans,
)
from .lexicon import LexiconTrie, hypothesis_to_transcript, lexicon_beam_search_nbest
from .transcript import LogPosteriors, TimedWord, Transcript, Vocabulary

log = logging.getLogger(__name__)

MODES = ("greedy", "beam", "rescore", "joint", "lexicon")


@dataclass(frozen=True)
class DecodeOptions:
    mode: str = "greedy"
    beam: BeamConfig = field(default_factory=BeamConfig)
    scorer: Any = None
    trie: LexiconTrie | None = None
    lm_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown decode mode {self.mode!r}; choose from {MODES}")
        if self.mode in ("rescore", "joint") and self.scorer is None:
            raise ValueError(f"mode {self.mode!r} needs a scorer")
        if self.mode == "lexicon" and self.trie is None:
            raise ValueError("mode 'lexicon' needs a lexicon trie")


def decode_words(
    post: LogPosteriors, vocab: Vocabulary, opts: DecodeOptions, offset_frames: int = 0
) -> list[TimedWord]:
    fd = post.frame_duration_s
    if opts.mode == "greedy":
        spans = token_spans(greedy_path(post).tolist(), vocab.blank_index)
        return spans_to_words(spans, vocab, fd, offset_frames)
    if opts.mode == "lexicon":
        nbest = lexicon_beam_search_nbest(post, vocab, opts.trie, opts.lm_weight, opts.beam)
        if not nbest:
            return []
        return list(hypothesis_to_transcript(nbest[0], post, vocab, "", offset_frames).words)
    if opts.mode == "beam":
        hyps = prefix_beam_search(post, vocab, opts.beam)
    elif opts.mode == "rescore":
        hyps = attention_rescore(prefix_beam_search(post, vocab, opts.beam), opts.scorer, opts.beam)
    else:
        hyps = joint_decode(post, vocab, opts.scorer, opts.beam)
    best = hyps[0].tokens
    return spans_to_words(align_tokens(post, vocab, best), vocab, fd, offset_frames)


def decode_file(post: LogPosteriors, vocab: Vocabulary, opts: DecodeOptions, file_id: str = "") -> Transcript:
    return Transcript(file_id, tuple(decode_words(post, vocab, opts)))


def _decode_chunk(args) -> list[TimedWord]:
    post, vocab, opts, offset = args
    return decode_words(post, vocab, opts, offset)


def decode_chunked(
    post: LogPosteriors,
    vocab: Vocabulary,
    opts: DecodeOptions,
    chunk_frames: int,
    overlap_frames: int,
    min_agreement_words: int = 3,
    file_id: str = "",
    jobs: int = 1,
) -> Transcript:
    """Plan chunks, decode each independently (in parallel when ``jobs > 1``), stitch."""
    specs = plan_chunks(post.frames, chunk_frames, overlap_frames)
    work = [(post.slice(s.start_frame, s.end_frame), vocab, opts, s.start_frame) for s in specs]
    log.info("%s: %d frames in %d chunks", file_id or "<input>", post.frames, len(specs))
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunk_words = list(pool.map(_decode_chunk, work))
    else:
        chunk_words = [_decode_chunk(w) for w in work]
    results = [
        ChunkResult(spec, tuple(words), post.frame_duration_s)
        for spec, words in zip(specs, chunk_words)
    ]
    return stitch(results, min_agreement_words, file_id)
