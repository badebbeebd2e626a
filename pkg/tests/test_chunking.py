import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfasr.chunking import ChunkResult, ChunkSpec, StitchError, plan_chunks, stitch
from lfasr.ctc import BeamConfig
from lfasr.pipeline import DecodeOptions, decode_chunked, decode_file
from lfasr.synth import SynthConfig, char_vocabulary, synthesize
from lfasr.transcript import TimedWord, Vocabulary

WORDS = "the quick brown fox jumps over a lazy dog and runs far away from here".split()


def test_plan_example():
    specs = plan_chunks(100, 40, 10)
    assert [(s.start_frame, s.end_frame) for s in specs] == [(0, 40), (30, 70), (60, 100), (90, 100)]
    assert [(s.left_overlap_frames, s.right_overlap_frames) for s in specs] == [
        (0, 10), (10, 10), (10, 10), (10, 0)
    ]


def test_plan_edge_cases():
    assert plan_chunks(0, 40, 10) == []
    assert [(s.start_frame, s.end_frame) for s in plan_chunks(20, 40, 10)] == [(0, 20)]
    with pytest.raises(ValueError):
        plan_chunks(100, 10, 10)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 500), st.integers(2, 80), st.data())
def test_plan_tiles_stream(total, chunk, data):
    overlap = data.draw(st.integers(0, chunk - 1))
    specs = plan_chunks(total, chunk, overlap)
    if total == 0:
        assert specs == []
        return
    assert specs[0].start_frame == 0 and specs[-1].end_frame == total
    for a, b in zip(specs, specs[1:]):
        assert b.start_frame - a.start_frame == chunk - overlap
        assert a.end_frame - b.start_frame == min(overlap, a.end_frame - b.start_frame)
        assert b.start_frame <= a.end_frame


def timed(texts, start, step=1.0):
    return tuple(TimedWord(t, start + i * step, start + i * step + 0.8) for i, t in enumerate(texts))


def result(index, start_frame, end_frame, words):
    return ChunkResult(ChunkSpec(index, start_frame, end_frame), words, 1.0)


def test_stitch_identical_overlap_keeps_one_copy():
    left = result(0, 0, 4, timed("hello world how are".split(), 0.0))
    right = result(1, 1, 5, timed("world how are you".split(), 1.0))
    out = stitch([left, right], min_agreement_words=3)
    assert out.texts == "hello world how are you".split()


def test_stitch_zero_overlap_concatenates():
    left = result(0, 0, 2, timed(["a", "b"], 0.0))
    right = result(1, 2, 4, timed(["c", "d"], 2.0))
    assert stitch([left, right]).texts == ["a", "b", "c", "d"]


def test_stitch_disagreement_cuts_at_midpoint():
    # window is [3, 6); midpoint 4.5
    left = result(0, 0, 6, timed("p q r a b c".split(), 0.0))
    right = result(1, 3, 9, timed("x y z s t u".split(), 3.0))
    out = stitch([left, right], min_agreement_words=1)
    left_kept = [w.text for w in left.words if (w.start_s + w.end_s) / 2 < 4.5]
    right_kept = [w.text for w in right.words if (w.start_s + w.end_s) / 2 >= 4.5]
    assert out.texts == left_kept + right_kept == "p q r a b z s t u".split()


def test_stitch_single_chunk_is_identity():
    r = result(0, 0, 4, timed(["a", "b"], 0.0))
    out = stitch([r], file_id="f")
    assert out.words == r.words and out.file_id == "f"


def test_stitch_rejects_unordered():
    a = result(0, 0, 4, ())
    b = result(1, 2, 6, ())
    with pytest.raises(StitchError):
        stitch([b, a])
    with pytest.raises(StitchError):
        stitch([a, a])


def test_chunk_result_times_must_fit():
    with pytest.raises(ValueError):
        result(0, 0, 2, timed(["a", "b", "c"], 0.0))


def word_vocab():
    return Vocabulary(tuple(["<blk>"] + ["\u2581" + w for w in sorted(set(WORDS))]), 0)


@pytest.mark.parametrize("seed", range(10))
def test_chunked_decode_equals_whole_word_tokens(seed):
    # one token per word: a 10-frame overlap always holds several whole words
    rnd = random.Random(seed)
    words = [rnd.choice(WORDS) for _ in range(80)]
    vocab = word_vocab()
    post, truth = synthesize(words, vocab, SynthConfig(frames_per_token=rnd.randint(1, 2)))
    opts = DecodeOptions("greedy")
    whole = decode_file(post, vocab, opts)
    chunked = decode_chunked(post, vocab, opts, chunk_frames=40, overlap_frames=10)
    assert chunked.texts == whole.texts == truth.texts == words
    assert chunked.words == whole.words


@pytest.mark.parametrize("seed", range(10))
def test_chunked_decode_equals_whole_char_tokens(seed):
    # character tokens: words span up to ~30 frames, so the overlap is widened
    rnd = random.Random(seed)
    words = [rnd.choice(WORDS) for _ in range(60)]
    vocab = char_vocabulary()
    post, _ = synthesize(words, vocab, SynthConfig(frames_per_token=rnd.randint(1, 3)))
    opts = DecodeOptions("greedy")
    whole = decode_file(post, vocab, opts)
    chunked = decode_chunked(post, vocab, opts, chunk_frames=300, overlap_frames=100)
    assert chunked.texts == whole.texts == words
    assert chunked.words == whole.words
    starts = [w.start_s for w in chunked.words]
    assert starts == sorted(starts)


def test_chunked_beam_decode():
    vocab = char_vocabulary()
    words = "over a lazy dog and far away".split()
    post, _ = synthesize(words, vocab, SynthConfig(frames_per_token=2))
    opts = DecodeOptions("beam", BeamConfig(beam_size=4))
    assert decode_chunked(post, vocab, opts, 50, 12, jobs=2).texts == words
