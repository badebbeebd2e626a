"""Acceptance gate: one test per criterion, each reported as a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines appear in the
"acceptance criteria" section of the terminal summary. Running this file
directly prints the same lines.
"""

import itertools
import json
import math
import random
import struct
import time

import numpy as np
import pytest

from lfasr import align
from lfasr.align import CellMeter, FileScore, align_linear, align_quadratic, micro_average, op_counts
from lfasr.cli import run
from lfasr.ctc import (
    BeamConfig,
    InfeasibleAlignmentError,
    TableScorer,
    forced_align,
    greedy_decode,
    joint_decode,
    prefix_beam_search,
)
from lfasr.lexicon import LexiconEntry, UnigramLexicon, compile_trie, lexicon_beam_search_nbest
from lfasr.synth import char_vocabulary
from lfasr.transcript import (
    FormatError,
    LogPosteriors,
    SpeakerSegment,
    TimedWord,
    Transcript,
    Vocabulary,
    format_ctm,
    format_rttm,
    parse_ctm,
    parse_rttm,
    read_posteriors,
    transcript_from_json,
    write_posteriors,
)
from lfasr.verbatim import filter_words, removal_mask
from lfasr.wder import compute_wder, optimal_speaker_map

from oracles import best_paths, collapse, edit_distance, marginals, random_posteriors


def vocab(V):
    return Vocabulary(tuple(["<blk>"] + [chr(ord("a") + i) for i in range(V - 1)]), 0)


# 1 ---------------------------------------------------------------------------


def test_ctc_oracle_suite(criterion):
    def check():
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(200):
            T, V = int(rng.integers(1, 6)), int(rng.integers(2, 5))
            post = random_posteriors(rng, T, V)
            oracle = marginals(post, 0)
            hyps = prefix_beam_search(post, vocab(V), BeamConfig(beam_size=len(oracle)))
            assert {h.tokens for h in hyps} == set(oracle)
            for h in hyps:
                worst = max(worst, abs(h.logp_ctc - oracle[h.tokens]))
        elapsed = time.perf_counter() - t0
        assert worst < 1e-9, worst
        assert elapsed < 10.0, elapsed
        return f"max |err| {worst:.1e}, {elapsed:.2f} s"

    criterion(1, "prefix beam search matches path enumeration", check)


# 2 ---------------------------------------------------------------------------


def test_greedy_identity(criterion):
    def check():
        rng = np.random.default_rng(7)
        for k in range(1000):
            T, V = int(rng.integers(0, 30)), int(rng.integers(2, 8))
            if k % 2:
                # coarse values force argmax ties
                probs = rng.integers(1, 4, size=(T, V)).astype(float)
                probs /= probs.sum(axis=1, keepdims=True) if T else 1.0
                post = LogPosteriors.from_probs(probs) if T else LogPosteriors(np.zeros((0, V)))
            else:
                post = random_posteriors(rng, T, V, alpha=0.3)
            expected = list(collapse(np.argmax(post.values, axis=1).tolist(), 0)) if T else []
            assert greedy_decode(post, vocab(V)) == expected
        return "1000 matrices"

    criterion(2, "greedy decode equals collapse(argmax)", check)


# 3 ---------------------------------------------------------------------------


def test_forced_alignment(criterion):
    def check():
        rng = np.random.default_rng(11)
        targets = 0
        for _ in range(100):
            T, V = int(rng.integers(1, 7)), int(rng.integers(2, 5))
            post = random_posteriors(rng, T, V)
            for target, best in best_paths(post, 0).items():
                if not target:
                    continue
                path = forced_align(post, vocab(V), target)
                assert path.total_logp == best, (target, path.total_logp, best)
                assert collapse(path.labels, 0) == target
                targets += 1
            # a repeat needs a blank in between, so T repeats need 2T-1 frames
            with pytest.raises(InfeasibleAlignmentError):
                forced_align(post, vocab(V), [1] * T + [1])
            with pytest.raises(InfeasibleAlignmentError):
                forced_align(post, vocab(V), [1] * (T + 1))
        return f"{targets} targets exact"

    criterion(3, "Viterbi score equals best enumerated path", check)


# 4 ---------------------------------------------------------------------------


def random_table(rng, V, depth=3):
    rows = {}
    prefixes = {()}
    frontier = [()]
    for _ in range(depth):
        frontier = [p + (c,) for p in frontier for c in range(1, V)]
        prefixes.update(frontier)
    for p in sorted(prefixes):
        logits = rng.normal(scale=2.0, size=V)
        rows[p] = dict(enumerate((logits - np.logaddexp.reduce(logits)).tolist()))
    final = {p: float(-rng.exponential()) for p in sorted(prefixes)}
    return TableScorer(V, rows, final)


def test_joint_degeneracy(criterion):
    def check():
        rng = np.random.default_rng(5)
        for _ in range(50):
            V = int(rng.integers(2, 6))
            post = random_posteriors(rng, int(rng.integers(0, 10)), V)
            cfg = BeamConfig(beam_size=int(rng.integers(1, 9)), ctc_weight=1.0)
            joint = joint_decode(post, vocab(V), random_table(rng, V), cfg)
            plain = prefix_beam_search(post, vocab(V), cfg)
            assert [h.tokens for h in joint] == [h.tokens for h in plain]
        return "50 cases"

    criterion(4, "joint decode at ctc_weight=1 equals CTC beam", check)


# 5 ---------------------------------------------------------------------------


def word_pair(rnd: random.Random):
    n = int(2000 ** rnd.random())
    n = min(n, 2000)
    types = rnd.choice([3, 10, 100, 1000])
    ref = [f"w{rnd.randrange(types)}" for _ in range(n)]
    if rnd.random() < 0.5:
        hyp = [f"w{rnd.randrange(types)}" for _ in range(min(2000, int(2000 ** rnd.random())))]
    else:
        hyp = []
        for w in ref:
            r = rnd.random()
            if r < 0.05:
                continue
            hyp.append(f"w{rnd.randrange(types)}" if r < 0.12 else w)
            if r > 0.96:
                hyp.append(f"w{rnd.randrange(types)}")
        hyp = hyp[:2000]
    return ref, hyp


def test_alignment_oracle(criterion, monkeypatch):
    def check():
        rnd = random.Random(99)
        # small base problems so that the divide-and-conquer recursion is
        # exercised at every size
        monkeypatch.setattr(align, "BASE_CELLS", 64)
        pairs = [word_pair(rnd) for _ in range(990)]
        pairs += [([f"w{rnd.randrange(50)}" for _ in range(2000)],
                   [f"w{rnd.randrange(50)}" for _ in range(rnd.randint(1900, 2000))]) for _ in range(10)]
        worst_ratio = 0.0
        for ref, hyp in pairs:
            meter = CellMeter()
            lin = op_counts(align_linear(ref, hyp, meter))
            quad = op_counts(align_quadratic(ref, hyp))
            assert lin == quad, (len(ref), len(hyp), lin, quad)
            c, s, i, d = quad
            assert s + i + d == edit_distance(ref, hyp)
            bound = 4 * (min(len(ref), len(hyp)) + 1) + align.BASE_CELLS
            assert meter.peak <= bound, (meter.peak, bound)
            worst_ratio = max(worst_ratio, meter.peak / bound)
        return f"1000 pairs, peak cells <= 4(min+1)+{align.BASE_CELLS} (max ratio {worst_ratio:.2f})"

    criterion(5, "linear alignment equals quadratic DP oracle", check)


# 6 ---------------------------------------------------------------------------


def test_micro_average(criterion):
    def check():
        scores = [FileScore("f1", 3, 2, 1, 0, 0), FileScore("f2", 1, 1, 0, 0, 0)]
        report = micro_average(scores)
        macro = sum(f.wer for f in scores) / len(scores)
        assert f"{report.micro_wer:.4f}" == "0.2500"
        assert f"{macro:.4f}" == "0.1667"
        return "micro 0.2500 vs macro 0.1667"

    criterion(6, "suite WER is micro-averaged", check)


# 7 ---------------------------------------------------------------------------


def ident_ops(n):
    words = [f"w{i}" for i in range(n)]
    return align.align_words(words, words)


def test_wder(criterion):
    def check():
        ops = ident_ops(3)
        mp = optimal_speaker_map(ops, ["A", "A", "B"], ["1", "1", "1"])
        assert compute_wder(ops, ["A", "A", "B"], ["1", "1", "1"], mp).wder == pytest.approx(1 / 3)

        rnd = random.Random(3)
        for _ in range(500):
            n = rnd.randint(1, 40)
            ops = ident_ops(n)
            labels = [f"S{k}" for k in range(rnd.randint(1, 6))]
            ref = [rnd.choice("ABCDE") for _ in range(n)]
            hyp = [rnd.choice(labels) for _ in range(n)]
            relabel = dict(zip(labels, rnd.sample([f"T{k}" for k in range(len(labels))], len(labels))))
            hyp2 = [relabel[h] for h in hyp]
            a = compute_wder(ops, ref, hyp, optimal_speaker_map(ops, ref, hyp))
            b = compute_wder(ops, ref, hyp2, optimal_speaker_map(ops, ref, hyp2))
            assert a == b

        cases = 0
        for n_ref, n_hyp in itertools.product(range(1, 9), repeat=2):
            for _ in range(2):
                n = rnd.randint(1, 60)
                ops = ident_ops(n)
                ref = [f"R{rnd.randrange(n_ref)}" for _ in range(n)]
                hyp = [f"H{rnd.randrange(n_hyp)}" for _ in range(n)]
                ex = compute_wder(ops, ref, hyp, optimal_speaker_map(ops, ref, hyp, "exhaustive"))
                la = compute_wder(ops, ref, hyp, optimal_speaker_map(ops, ref, hyp, "assignment"))
                assert ex.speaker_errors == la.speaker_errors
                cases += 1
        return f"1/3 case, 500 relabelings, {cases} exhaustive/assignment cases"

    criterion(7, "WDER example, relabeling invariance, mapping agreement", check)


# 8 ---------------------------------------------------------------------------


def test_chunk_pipeline_identity(criterion, tmp_path):
    def check():
        rnd = random.Random(8)
        lexicon = "we will look at how the market moved this quarter and what it means for next year".split()
        words = [rnd.choice(lexicon) for _ in range(200)]
        (tmp_path / "vocab.txt").write_text(char_vocabulary().to_text())
        (tmp_path / "talk.txt").write_text(" ".join(words) + "\n")
        common = ["--vocab", str(tmp_path / "vocab.txt"), "-q"]
        assert run(["synth", str(tmp_path / "talk.txt"), "--output-dir", str(tmp_path / "syn"),
                    "--vocab", str(tmp_path / "vocab.txt"), "--frame-ms", "40", "-q"]) == 0
        rvbp = str(tmp_path / "syn" / "talk.rvbp")
        assert run(["pipeline", rvbp, *common, "--mode", "greedy", "--chunk-s", "20", "--overlap-s", "2",
                    "--output-dir", str(tmp_path / "chunked")]) == 0
        assert run(["decode", rvbp, *common, "--mode", "greedy", "--output-dir", str(tmp_path / "whole")]) == 0
        chunked = transcript_from_json((tmp_path / "chunked" / "talk.json").read_text())
        whole = transcript_from_json((tmp_path / "whole" / "talk.json").read_text())
        post = read_posteriors((tmp_path / "syn" / "talk.rvbp").read_bytes())
        n_chunks = math.ceil(post.frames / (500 - 50))
        assert n_chunks >= 3
        assert chunked.words == whole.words
        assert chunked.texts == words
        assert run(["score", "--ref", str(tmp_path / "talk.txt"), "--hyp", str(tmp_path / "chunked" / "talk.json"),
                    "--output-dir", str(tmp_path / "score"), "-q"]) == 0
        report = json.loads((tmp_path / "score" / "report.json").read_text())
        assert f"{report['micro_wer']:.4f}" == "0.0000"
        return f"{post.frames} frames, ~{n_chunks} chunks, WER {report['micro_wer']:.4f}"

    criterion(8, "chunked pipeline equals whole-stream decode", check)


# 9 ---------------------------------------------------------------------------

VERBATIM = "and and if you if you try and understand which ones there are you it's it's a it's a long list"
NON_VERBATIM = "and if you try and understand which ones there are it's a long list"


def fuzz_corpus(seed=9, files=50):
    rnd = random.Random(seed)
    base = "so i think we we should um go to the the market and you know sort of like see uh what it's".split()
    corpus = []
    for _ in range(files):
        words = []
        for _ in range(rnd.randint(0, 80)):
            w = rnd.choice(base)
            words.append(w)
            if rnd.random() < 0.15:
                words.append(w)
            if rnd.random() < 0.05 and len(words) >= 2:
                words.extend(words[-2:])
        corpus.append(words)
    return corpus


def test_verbatimicity(criterion):
    def check():
        corpus = fuzz_corpus()
        for words in corpus:
            assert filter_words(words, 1.0) == words
            masks = [removal_mask(words, lvl) for lvl in (0.0, 0.25, 0.5, 0.75, 1.0)]
            for lo, hi in zip(masks, masks[1:]):
                assert all(h or not l for l, h in zip(lo, hi))
        out = filter_words(VERBATIM.split(), 0.0)
        edits = edit_distance(out, NON_VERBATIM.split())
        assert edits <= 2
        return f"50 files, table row within {edits} edits"

    criterion(9, "verbatimicity identity, table row, monotone levels", check)


# 10 --------------------------------------------------------------------------


def test_lexicon_search(criterion):
    def check():
        rng = np.random.default_rng(10)
        rnd = random.Random(10)
        for _ in range(200):
            V = int(rng.integers(3, 6))
            v = vocab(V)
            entries = {}
            for _ in range(rnd.randint(1, 6)):
                spelling = tuple(rnd.randint(1, V - 1) for _ in range(rnd.randint(1, 3)))
                entries.setdefault(spelling, "".join(v.tokens[t] for t in spelling))
            lp = -math.log(len(entries) + 1)
            lexicon = UnigramLexicon(tuple(LexiconEntry(w, s, lp) for s, w in entries.items()))
            words = set(entries.values())
            post = random_posteriors(rng, int(rng.integers(1, 9)), V)
            nbest = lexicon_beam_search_nbest(post, v, compile_trie(lexicon), float(rng.uniform(0, 2)),
                                              BeamConfig(beam_size=int(rng.integers(1, 12))))
            for h in nbest:
                assert set(h.words) <= words

        for _ in range(50):
            T, V = int(rng.integers(1, 6)), int(rng.integers(2, 4))
            v = vocab(V)
            post = random_posteriors(rng, T, V)
            seqs = [s for n in range(1, T + 1) for s in itertools.product(range(1, V), repeat=n)]
            lp = -math.log(len(seqs))
            lexicon = UnigramLexicon(tuple(LexiconEntry("".join(v.tokens[i] for i in s), s, lp) for s in seqs))
            top = lexicon_beam_search_nbest(post, v, compile_trie(lexicon), 0.0, BeamConfig(beam_size=10**4))[0]
            ctc = prefix_beam_search(post, v, BeamConfig(beam_size=10**4))[0]
            assert top.tokens == ctc.tokens
        return "200 closed-vocabulary runs, 50 lm_weight=0 cases"

    criterion(10, "lexicon search closed vocabulary and CTC consistency", check)


# 11 --------------------------------------------------------------------------


def test_format_goldens(criterion):
    def check():
        rnd = random.Random(11)
        rng = np.random.default_rng(11)
        for _ in range(50):
            t, words = 0.0, []
            for _ in range(rnd.randint(0, 20)):
                t += rnd.randint(0, 500) / 1000
                conf = rnd.choice([None, rnd.randint(0, 10_000) / 10_000])
                words.append(TimedWord(rnd.choice(["a", "bb", "it's"]), t, t + rnd.randint(0, 900) / 1000,
                                       confidence=conf))
            text = format_ctm(Transcript("f1", tuple(words)))
            assert format_ctm(parse_ctm(text)) == text
            segs = [SpeakerSegment("f1", rnd.choice("AB"), k, k + rnd.randint(1, 900) / 1000) for k in range(5)]
            text = format_rttm(segs)
            assert format_rttm(parse_rttm(text)) == text
            post = random_posteriors(rng, int(rng.integers(0, 20)), int(rng.integers(2, 8)))
            data = write_posteriors(post)
            assert write_posteriors(read_posteriors(data)) == data

        messages = []
        for bad in ["f 1 0.0 0.1 a\nf 1 0.5\n", "f 1 0.0 0.1 a\nf 1 0.2 -1 b\n"]:
            with pytest.raises(FormatError) as exc:
                parse_ctm(bad)
            assert "line 2" in str(exc.value)
            messages.append(str(exc.value))
        with pytest.raises(FormatError) as exc:
            parse_rttm("SPEAKER f 1 0.0 1.0 <NA> <NA> A <NA> <NA>\nSPEAKER f 1 x 1 <NA> <NA> B <NA> <NA>\n")
        assert "line 2" in str(exc.value)
        header = struct.pack("<4sIIII", b"RVBP", 1, 2, 2, 40000)
        rows = np.log(np.array([[0.5, 0.5], [0.9, 0.9]], dtype="<f4")).astype("<f4").tobytes()
        for data, where in [(b"", "byte offset 0"), (header + rows[:-3], "byte offset"), (header + rows, "byte offset 28")]:
            with pytest.raises(FormatError) as exc:
                read_posteriors(data)
            assert where in str(exc.value)
        return "CTM/RTTM/RVBP stable; errors carry line/offset"

    criterion(11, "format round-trips and located parse errors", check)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
