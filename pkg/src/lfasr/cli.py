"""Command-line entry point: ``lfasr <subcommand> ...``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .align import AlignmentError, ScoringError, micro_average, score_words, side_by_side, transcript_words
from .chunking import (
    DEFAULT_CHUNK_S,
    DEFAULT_MIN_AGREEMENT,
    DEFAULT_OVERLAP_S,
    ChunkResult,
    ChunkSpec,
    StitchError,
    stitch,
)
from .ctc import BeamConfig, DecodeError, TableScorer, UniformScorer
from .lexicon import LexiconError, UnigramLexicon, compile_trie
from .normalize import DEFAULT_FILLERS, NormalizationConfig, normalize_text
from .pipeline import MODES, DecodeOptions, decode_chunked, decode_file
from .synth import SynthConfig, synthesize
from .transcript import (
    FormatError,
    TimedWord,
    Transcript,
    Vocabulary,
    attribute_speakers,
    format_ctm,
    parse_ctm,
    parse_rttm,
    read_posteriors,
    transcript_from_json,
    transcript_to_dict,
    transcript_to_json,
    write_posteriors,
)
from .verbatim import VerbatimicityRules, apply_verbatimicity, transcript_spans
from .wder import WderError, pool, score_wder

log = logging.getLogger("lfasr")

TRANSCRIPT_SUFFIXES = (".json", ".ctm", ".txt")
MANIFEST = "manifest.json"


class CliError(Exception):
    """Processing failure reported as exit code 1."""


# ---------------------------------------------------------------------------
# I/O helpers
# ---------------------------------------------------------------------------


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}") from None


def _read_text(path: Path) -> str:
    return _read_bytes(path).decode("utf-8")


def load_transcript(path: Path) -> Transcript:
    text = _read_text(path)
    try:
        if path.suffix == ".json":
            return transcript_from_json(text)
        if path.suffix == ".ctm":
            t = parse_ctm(text)
            return t if t.file_id else Transcript(path.stem, t.words, t.channel)
        if path.suffix == ".txt":
            return Transcript.from_text(path.stem, text)
    except (FormatError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from None
    raise CliError(f"{path}: unsupported transcript format (use .json, .ctm or .txt)")


def collect(path: Path, suffixes: Sequence[str]) -> dict[str, Path]:
    """Files keyed by stem: the file itself, or the matching files of a directory."""
    if path.is_dir():
        return {p.stem: p for p in sorted(path.iterdir()) if p.suffix in suffixes and p.name != MANIFEST}
    if not path.exists():
        raise CliError(f"{path}: no such file or directory")
    return {path.stem: path}


def load_vocab(path: Path) -> Vocabulary:
    try:
        return Vocabulary.from_text(_read_text(path))
    except (FormatError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from None


def load_scorer(path: Path | None, vocab: Vocabulary):
    if path is None:
        return UniformScorer(len(vocab))
    try:
        doc = json.loads(_read_text(path))
        increments = {}
        for row in doc.get("rows", []):
            prefix = tuple(vocab.index(t) for t in row["prefix"])
            increments[prefix] = {vocab.index(t): float(v) for t, v in row["next"].items()}
        final = {
            tuple(vocab.index(t) for t in f["prefix"]): float(f["bonus"]) for f in doc.get("final", [])
        }
        return TableScorer(len(vocab), increments, final, doc.get("default"))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: bad scorer table: {exc}") from None


class Output:
    """Writes data files either into ``--output-dir`` or to standard output."""

    def __init__(self, directory: str | None):
        self.dir = Path(directory) if directory else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []
        self._stdout_docs = 0

    def emit(self, name: str, data: str | bytes) -> None:
        if self.dir:
            target = self.dir / name
            target.parent.mkdir(parents=True, exist_ok=True)
            if isinstance(data, bytes):
                target.write_bytes(data)
            else:
                target.write_text(data, encoding="utf-8")
            self.written.append(name)
        elif isinstance(data, bytes):
            sys.stdout.buffer.write(data)
            sys.stdout.flush()
        else:
            sys.stdout.write(data)
            self._stdout_docs += 1


def _transcript_text(t: Transcript, fmt: str) -> str:
    if fmt == "ctm":
        return format_ctm(t)
    return transcript_to_json(t)


def _stdout_json(t: Transcript, multiple: bool) -> str:
    if multiple:
        return json.dumps(transcript_to_dict(t), ensure_ascii=False) + "\n"
    return transcript_to_json(t)


def _map(fn: Callable, items: list, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool_:
            return list(pool_.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _decode_options(args, vocab: Vocabulary) -> DecodeOptions:
    beam = BeamConfig(
        beam_size=args.beam,
        ctc_weight=args.ctc_weight,
        verbatimicity=args.verbatimicity,
        prune_log_threshold=args.prune,
    )
    scorer = trie = None
    if args.mode in ("rescore", "joint"):
        scorer = load_scorer(Path(args.scorer_table) if args.scorer_table else None, vocab)
    if args.mode == "lexicon":
        if not args.lexicon:
            raise CliError("--mode lexicon needs --lexicon")
        path = Path(args.lexicon)
        try:
            lexicon = UnigramLexicon.from_text(_read_text(path), vocab, args.oov_logp)
            trie = compile_trie(lexicon, vocab.blank_index)
        except (FormatError, LexiconError) as exc:
            raise CliError(f"{path}: {exc}") from None
    return DecodeOptions(args.mode, beam, scorer, trie, args.lm_weight)


def _decode_one(job) -> tuple[str, Transcript]:
    path, vocab, opts, chunking, jobs = job
    try:
        post = read_posteriors(_read_bytes(path))
    except FormatError as exc:
        raise CliError(f"{path}: {exc}") from None
    try:
        if chunking is None:
            return path.stem, decode_file(post, vocab, opts, path.stem)
        chunk_s, overlap_s, min_agree = chunking
        fd = post.frame_duration_s
        return path.stem, decode_chunked(
            post, vocab, opts, max(1, round(chunk_s / fd)), round(overlap_s / fd), min_agree, path.stem, jobs
        )
    except (DecodeError, LexiconError, StitchError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from None


def cmd_decode(args, out: Output, inputs: list[Path]) -> int:
    vocab = load_vocab(Path(args.vocab))
    opts = _decode_options(args, vocab)
    chunking = None
    if args.command == "pipeline":
        if args.chunk_s <= args.overlap_s:
            raise CliError("--chunk-s must exceed --overlap-s")
        chunking = (args.chunk_s, args.overlap_s, args.min_agreement)
    paths = [Path(p) for p in args.inputs]
    inputs.extend(paths)
    if chunking is None:
        results = _map(_decode_one, [(p, vocab, opts, None, 1) for p in paths], args.jobs)
    else:
        results = [_decode_one((p, vocab, opts, chunking, args.jobs)) for p in paths]
    for stem, transcript in results:
        if out.dir or args.format == "ctm":
            out.emit(f"{stem}.{args.format}", _transcript_text(transcript, args.format))
        else:
            out.emit(stem, _stdout_json(transcript, len(results) > 1))
    return 0


def _norm_config(args) -> NormalizationConfig:
    fillers = frozenset(args.fillers.split(",")) if getattr(args, "fillers", None) else DEFAULT_FILLERS
    return NormalizationConfig(
        lowercase=not args.keep_case,
        strip_punctuation=not args.keep_punctuation,
        filler_tokens=fillers,
        apply_filler_removal=args.remove_fillers,
    )


def _pairs(args, inputs: list[Path]) -> tuple[list[tuple[str, Path, Path]], list[str]]:
    refs = collect(Path(args.ref), TRANSCRIPT_SUFFIXES)
    hyps = collect(Path(args.hyp), TRANSCRIPT_SUFFIXES)
    if len(refs) == 1 and len(hyps) == 1 and not Path(args.ref).is_dir():
        (rk, rp), (_, hp) = next(iter(refs.items())), next(iter(hyps.items()))
        hyps = {rk: hp}
    problems = []
    pairs = []
    for key, rp in refs.items():
        inputs.append(rp)
        if key not in hyps:
            problems.append(f"{rp}: no hypothesis file for {key!r} in {args.hyp}")
            continue
        inputs.append(hyps[key])
        pairs.append((key, rp, hyps[key]))
    if not refs:
        problems.append(f"{args.ref}: no reference transcripts found")
    return pairs, problems


def _score_one(job):
    key, rp, hp, config = job
    try:
        ref_words = transcript_words(load_transcript(rp), config)
        hyp_words = transcript_words(load_transcript(hp), config)
        score, ops = score_words(ref_words, hyp_words, key)
        return key, score, side_by_side(ref_words, hyp_words, ops), None
    except (CliError, ScoringError, AlignmentError) as exc:
        return key, None, None, str(exc) if isinstance(exc, CliError) else f"{rp}: {exc}"


def cmd_score(args, out: Output, inputs: list[Path]) -> int:
    config = _norm_config(args)
    pairs, problems = _pairs(args, inputs)
    scores = []
    for key, score, sbs, err in _map(_score_one, [(k, r, h, config) for k, r, h in pairs], args.jobs):
        if err:
            problems.append(err)
            continue
        scores.append(score)
        if args.side_by_side and out.dir:
            out.emit(f"side_by_side/{key}.txt", sbs)
    for p in problems:
        log.error(p)
    if not scores:
        raise CliError("no file could be scored")
    report = micro_average(scores, args.suite_name)
    out.emit("report.json", report.to_json())
    if not args.quiet:
        log.info("%s micro WER %.4f over %d reference words", args.suite_name or "suite",
                 report.micro_wer, report.total_ref_words)
    return 1 if problems else 0


def _segments(path_arg: str | None, inputs: list[Path]):
    if not path_arg:
        return None
    segs = []
    for _, p in collect(Path(path_arg), (".rttm",)).items():
        inputs.append(p)
        try:
            segs.extend(parse_rttm(_read_text(p)))
        except FormatError as exc:
            raise CliError(f"{p}: {exc}") from None
    return segs


def cmd_wder(args, out: Output, inputs: list[Path]) -> int:
    config = _norm_config(args)
    pairs, problems = _pairs(args, inputs)
    ref_segs = _segments(args.ref_rttm, inputs)
    hyp_segs = _segments(args.hyp_rttm, inputs)
    files, scores = [], []
    for key, rp, hp in pairs:
        try:
            ref, hyp = load_transcript(rp), load_transcript(hp)
            if ref_segs is not None:
                ref = attribute_speakers(ref, [s for s in ref_segs if s.file_id == ref.file_id], args.policy)
            if hyp_segs is not None:
                hyp = attribute_speakers(hyp, [s for s in hyp_segs if s.file_id == hyp.file_id], args.policy)
            score, mapping = score_wder(ref, hyp, config)
        except (CliError, WderError, ValueError) as exc:
            problems.append(str(exc) if isinstance(exc, CliError) else f"{rp}: {exc}")
            continue
        scores.append(score)
        files.append({"file_id": key, **score.to_dict(), "mapping": mapping.as_dict()})
    for p in problems:
        log.error(p)
    if not scores:
        raise CliError("no file could be scored")
    report = {"files": files, "pooled": pool(scores).to_dict()}
    out.emit("wder.json", json.dumps(report, indent=2, sort_keys=False) + "\n")
    return 1 if problems else 0


def cmd_normalize(args, out: Output, inputs: list[Path]) -> int:
    config = _norm_config(args)
    if args.input and args.input != "-":
        inputs.append(Path(args.input))
        text = _read_text(Path(args.input))
    else:
        text = sys.stdin.read()
    lines = [normalize_text(line, config) for line in text.splitlines()]
    out.emit("normalized.txt", "".join(line + "\n" for line in lines))
    return 0


def cmd_filter(args, out: Output, inputs: list[Path]) -> int:
    rules = VerbatimicityRules(max_phrase_len=args.max_phrase_len)
    if not 0.0 <= args.level <= 1.0:
        raise CliError(f"--level must be in [0, 1], got {args.level}")
    paths = [Path(p) for p in args.inputs]
    for path in paths:
        inputs.append(path)
        t = load_transcript(path)
        filtered = apply_verbatimicity(t, args.level, rules)
        stem = path.stem
        if out.dir:
            out.emit(f"{stem}.json", transcript_to_json(filtered))
        else:
            out.emit(stem, _stdout_json(filtered, len(paths) > 1))
        if args.emit_spans:
            spans = [
                {
                    "start_word_index": s.start_word_index,
                    "end_word_index": s.end_word_index,
                    "category": s.category,
                    "severity_rank": s.severity_rank,
                    "words": [w.text for w in t.words[s.start_word_index:s.end_word_index]],
                }
                for s in transcript_spans(t, rules)
            ]
            doc = json.dumps({"file_id": t.file_id, "spans": spans}, indent=2, ensure_ascii=False) + "\n"
            if out.dir:
                out.emit(f"{stem}.spans.json", doc)
            else:
                sys.stderr.write(doc)
    return 0


def _load_chunk(path: Path) -> tuple[str, ChunkResult]:
    try:
        doc = json.loads(_read_text(path))
        spec = ChunkSpec(
            int(doc["index"]),
            int(doc["start_frame"]),
            int(doc["end_frame"]),
            int(doc.get("left_overlap_frames", 0)),
            int(doc.get("right_overlap_frames", 0)),
        )
        words = [
            TimedWord(w["text"], float(w["start_s"]), float(w["end_s"]), w.get("speaker"))
            for w in doc["words"]
        ]
        return str(doc.get("file_id", "")), ChunkResult(spec, tuple(words), float(doc["frame_duration_s"]))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: bad chunk result: {exc}") from None


def chunk_to_json(result: ChunkResult, file_id: str) -> str:
    s = result.spec
    doc = {
        "file_id": file_id,
        "index": s.index,
        "start_frame": s.start_frame,
        "end_frame": s.end_frame,
        "left_overlap_frames": s.left_overlap_frames,
        "right_overlap_frames": s.right_overlap_frames,
        "frame_duration_s": result.frame_duration_s,
        "words": transcript_to_dict(Transcript(file_id, result.words))["words"],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def cmd_stitch(args, out: Output, inputs: list[Path]) -> int:
    loaded = []
    for p in args.inputs:
        inputs.append(Path(p))
        loaded.append(_load_chunk(Path(p)))
    loaded.sort(key=lambda fr: fr[1].spec.index)
    file_id = args.file_id or (loaded[0][0] if loaded else "")
    try:
        t = stitch([r for _, r in loaded], args.min_agreement, file_id)
    except StitchError as exc:
        raise CliError(str(exc)) from None
    name = f"{file_id or 'stitched'}.{args.format}"
    out.emit(name, _transcript_text(t, args.format))
    return 0


def cmd_synth(args, out: Output, inputs: list[Path]) -> int:
    vocab = load_vocab(Path(args.vocab))
    path = Path(args.transcript)
    inputs.append(path)
    source = load_transcript(path)
    cfg = SynthConfig(
        frames_per_token=args.frames_per_token,
        blank_frames=args.blank_frames,
        peak=args.peak,
        noise=args.noise,
        frame_duration_s=args.frame_ms / 1000.0,
        seed=args.seed,
    )
    try:
        post, timed = synthesize(source.texts, vocab, cfg, source.file_id or path.stem)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None
    stem = args.name or source.file_id or path.stem
    if not out.dir:
        raise CliError("synth needs --output-dir")
    out.emit(f"{stem}.rvbp", write_posteriors(post))
    out.emit(f"{stem}.json", transcript_to_json(timed))
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel workers")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--output-dir", help="write data files and a run manifest here")
    common.add_argument("-q", "--quiet", action="store_true")

    norm = argparse.ArgumentParser(add_help=False)
    norm.add_argument("--keep-case", action="store_true")
    norm.add_argument("--keep-punctuation", action="store_true")
    norm.add_argument("--remove-fillers", action="store_true")
    norm.add_argument("--fillers", help="comma-separated filler tokens")

    decode = argparse.ArgumentParser(add_help=False)
    decode.add_argument("inputs", nargs="+", help="RVBP posterior files")
    decode.add_argument("--vocab", required=True)
    decode.add_argument("--mode", choices=MODES, default="greedy")
    decode.add_argument("--beam", type=int, default=10)
    decode.add_argument("--ctc-weight", type=float, default=0.5)
    decode.add_argument("--verbatimicity", type=float, default=1.0)
    decode.add_argument("--prune", type=float, default=float("-inf"), help="per-frame log-prob floor")
    decode.add_argument("--scorer-table", help="JSON scorer table for rescore/joint (default: uniform)")
    decode.add_argument("--lexicon")
    decode.add_argument("--lm-weight", type=float, default=1.0)
    decode.add_argument("--oov-logp", type=float, default=float("-inf"))
    decode.add_argument("--format", choices=("json", "ctm"), default="json")

    parser = argparse.ArgumentParser(prog="lfasr", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lfasr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("decode", parents=[common, decode], help="decode posterior files")
    p = sub.add_parser("pipeline", parents=[common, decode], help="chunked decode + stitch")
    p.add_argument("--chunk-s", type=float, default=DEFAULT_CHUNK_S)
    p.add_argument("--overlap-s", type=float, default=DEFAULT_OVERLAP_S)
    p.add_argument("--min-agreement", type=int, default=DEFAULT_MIN_AGREEMENT)

    for name, what in (("score", "WER"), ("wder", "WDER")):
        p = sub.add_parser(name, parents=[common, norm], help=f"{what} of hypotheses vs references")
        p.add_argument("--ref", required=True)
        p.add_argument("--hyp", required=True)
        if name == "score":
            p.add_argument("--suite-name", default="")
            p.add_argument("--side-by-side", action="store_true")
        else:
            p.add_argument("--ref-rttm")
            p.add_argument("--hyp-rttm")
            p.add_argument("--policy", choices=("inherit", "unknown"), default="inherit")

    p = sub.add_parser("normalize", parents=[common, norm], help="normalize text lines")
    p.add_argument("input", nargs="?", default="-")

    p = sub.add_parser("filter-verbatim", parents=[common], help="apply a verbatimicity level")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--level", type=float, required=True)
    p.add_argument("--max-phrase-len", type=int, default=4)
    p.add_argument("--emit-spans", action="store_true")

    p = sub.add_parser("stitch", parents=[common], help="stitch chunk result documents")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--min-agreement", type=int, default=DEFAULT_MIN_AGREEMENT)
    p.add_argument("--file-id")
    p.add_argument("--format", choices=("json", "ctm"), default="json")

    p = sub.add_parser("synth", parents=[common], help="synthesize RVBP posteriors from a transcript")
    p.add_argument("transcript")
    p.add_argument("--vocab", required=True)
    p.add_argument("--name")
    p.add_argument("--frame-ms", type=float, default=40.0)
    p.add_argument("--frames-per-token", type=int, default=1)
    p.add_argument("--blank-frames", type=int, default=1)
    p.add_argument("--peak", type=float, default=0.95)
    p.add_argument("--noise", type=float, default=0.0)
    return parser


COMMANDS = {
    "decode": cmd_decode,
    "pipeline": cmd_decode,
    "score": cmd_score,
    "wder": cmd_wder,
    "normalize": cmd_normalize,
    "filter-verbatim": cmd_filter,
    "stitch": cmd_stitch,
    "synth": cmd_synth,
}


def _digest(path: Path) -> str | None:
    try:
        return hashlib.sha256(path.read_bytes()).hexdigest()
    except OSError:
        return None


def _config_snapshot(args) -> dict:
    snap = {}
    for k, v in sorted(vars(args).items()):
        snap[k] = v if isinstance(v, (str, int, bool, list, type(None))) or (
            isinstance(v, float) and v == v and abs(v) != float("inf")
        ) else str(v)
    return snap


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    inputs: list[Path] = []
    try:
        out = Output(args.output_dir)
        code = COMMANDS[args.command](args, out, inputs)
    except CliError as exc:
        log.error("%s", exc)
        return 1
    except (FormatError, ValueError) as exc:
        log.error("%s", exc)
        return 1

    if out.dir:
        manifest = {
            "command_line": ["lfasr", *argv],
            "config": _config_snapshot(args),
            "input_digests": {str(p): _digest(p) for p in sorted(set(inputs))},
            "outputs": sorted(out.written),
            "tool_version": __version__,
            "timings": {
                "started_utc": started.isoformat(),
                "finished_utc": datetime.now(timezone.utc).isoformat(),
                "elapsed_s": round(time.perf_counter() - t0, 6),
            },
        }
        (out.dir / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
