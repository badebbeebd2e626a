import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfasr import align
from lfasr.align import (
    CORRECT,
    DELETION,
    INSERTION,
    SUBSTITUTION,
    AlignmentError,
    AlignmentOp,
    CellMeter,
    FileScore,
    ScoringError,
    align_linear,
    align_quadratic,
    align_words,
    check_ops,
    merge_reports,
    micro_average,
    op_counts,
    score_file,
    side_by_side,
)
from lfasr.normalize import NormalizationConfig
from lfasr.transcript import Transcript

from oracles import edit_distance, edit_distance_small


def kinds(ref, hyp):
    return [op.kind for op in align_words(ref.split(), hyp.split())]


def test_deletion_example():
    assert kinds("the cat sat", "the cat") == [CORRECT, CORRECT, DELETION]


def test_substitution_example():
    assert op_counts(align_words("a b c".split(), "a x c".split())) == (2, 1, 0, 0)


def test_empty_sides():
    assert kinds("", "a b") == [INSERTION, INSERTION]
    assert kinds("a b", "") == [DELETION, DELETION]
    assert align_words([], []) == []


def test_tie_break_prefers_substitution_over_indel_pair():
    assert kinds("a", "b") == [SUBSTITUTION]


def test_more_correct_among_equal_edits():
    # "x a" vs "a y": two substitutions or deletion + insertion with a match;
    # both cost two edits, the latter keeps one correct word
    assert op_counts(align_words("x a".split(), "a y".split())) == (1, 0, 1, 1)


def test_op_invariants():
    with pytest.raises(ValueError):
        AlignmentOp(CORRECT, 0, None)
    with pytest.raises(ValueError):
        AlignmentOp(INSERTION, 0, 1)
    with pytest.raises(ValueError):
        AlignmentOp("swap", 0, 0)


words = st.lists(st.sampled_from("abcde"), max_size=25)


@settings(max_examples=400, deadline=None)
@given(words, words)
def test_cost_matches_textbook_dp(ref, hyp):
    c, s, i, d = op_counts(align_quadratic(ref, hyp))
    assert s + i + d == edit_distance_small(ref, hyp) == edit_distance(ref, hyp)
    assert len(ref) == c + s + d and len(hyp) == c + s + i


@settings(max_examples=400, deadline=None)
@given(words, words)
def test_linear_equals_quadratic(ref, hyp):
    old = align.BASE_CELLS
    align.BASE_CELLS = 4
    try:
        meter = CellMeter()
        lin = align_linear(ref, hyp, meter)
    finally:
        align.BASE_CELLS = old
    quad = align_quadratic(ref, hyp)
    check_ops(ref, hyp, lin)
    assert op_counts(lin) == op_counts(quad)
    assert meter.peak <= 4 * (min(len(ref), len(hyp)) + 1) + 4


def test_long_pair_uses_linear_path():
    rnd = random.Random(0)
    ref = [rnd.choice("abcdefgh") for _ in range(3000)]
    hyp = [w if rnd.random() > 0.1 else "z" for w in ref][:2500]
    ops = align_words(ref, hyp, max_cells=1000)
    check_ops(ref, hyp, ops)
    assert op_counts(ops) == op_counts(align_quadratic(ref, hyp))


def test_check_ops_rejects_bad_alignment():
    with pytest.raises(AlignmentError):
        check_ops(["a"], ["a"], [AlignmentOp(SUBSTITUTION, 0, 0)])
    with pytest.raises(AlignmentError):
        check_ops(["a", "b"], ["a"], [AlignmentOp(CORRECT, 0, 0)])


# -- scoring ------------------------------------------------------------------


def tr(text, fid="f"):
    return Transcript.from_text(fid, text)


def test_score_file_examples():
    assert score_file(tr("a b c"), tr("a b c")).wer == 0
    assert score_file(tr("a b c"), tr("a x c")).wer == pytest.approx(1 / 3)
    s = score_file(tr("a"), tr("a b c"))
    assert (s.insertions, s.wer) == (2, 2.0)
    assert score_file(tr("a b"), tr("")).wer == 1.0


def test_score_file_normalizes_both_sides():
    assert score_file(tr("Hello, World!"), tr("hello world")).wer == 0


def test_empty_reference_is_an_error():
    with pytest.raises(ScoringError):
        score_file(tr(",,,"), tr("a"))


def test_micro_average_is_not_macro():
    report = micro_average([FileScore("f1", 3, 2, 1, 0, 0), FileScore("f2", 1, 1, 0, 0, 0)])
    assert report.micro_wer == 0.25
    assert report.to_dict()["micro_wer"] == 0.25
    macro = (1 / 3 + 0) / 2
    assert round(macro, 4) == 0.1667


def test_micro_average_edge_cases():
    assert micro_average([FileScore("f", 4, 3, 1, 0, 0)]).micro_wer == 0.25
    assert micro_average([FileScore("a", 2, 2, 0, 0, 0), FileScore("b", 1, 1, 0, 0, 0)]).micro_wer == 0
    with pytest.raises(ScoringError):
        micro_average([])


def test_file_score_invariant():
    with pytest.raises(ValueError):
        FileScore("f", 3, 1, 1, 0, 0)


scores = st.builds(
    lambda c, s, i, d: FileScore("f", c + s + d, c, s, i, d),
    st.integers(0, 20), st.integers(0, 5), st.integers(0, 5), st.integers(1, 5),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(scores, min_size=1, max_size=6), st.lists(scores, min_size=1, max_size=6))
def test_merge_then_score_equals_pooled_counts(a, b):
    merged = merge_reports(micro_average(a), micro_average(b))
    pooled = a + b
    errors = sum(f.substitutions + f.insertions + f.deletions for f in pooled)
    assert merged.micro_wer == errors / sum(f.ref_words for f in pooled)


def test_report_to_dict_rounds():
    d = micro_average([FileScore("f", 3, 2, 1, 0, 0)], "suite").to_dict()
    assert d["files"][0]["wer"] == 0.3333
    assert d["suite_name"] == "suite"


# -- side by side ---------------------------------------------------------------


def sbs(ref, hyp):
    r, h = ref.split(), hyp.split()
    return side_by_side(r, h, align_words(r, h))


def test_side_by_side_substitution():
    out = sbs("a b c", "a x c")
    rows = out.splitlines()[1:-1]
    assert sum(row.endswith("SUB") for row in rows) == 1
    assert out.splitlines()[-1] == "C=2 S=1 I=0 D=0 WER=0.3333"


def test_side_by_side_all_deletions_and_identity():
    rows = sbs("a b", "").splitlines()[1:-1]
    assert all(row.endswith("DEL") for row in rows) and len(rows) == 2
    rows = sbs("a b", "a b").splitlines()[1:-1]
    assert not any(row.endswith(("SUB", "INS", "DEL")) for row in rows)


def test_side_by_side_rejects_foreign_ops():
    with pytest.raises(AlignmentError):
        side_by_side(["a"], ["b"], align_words(["a"], ["a"]))


def test_filler_config_passes_through():
    cfg = NormalizationConfig(apply_filler_removal=True)
    assert score_file(tr("um hello"), tr("hello"), cfg).wer == 0
