"""Command-line pipeline: synth -> ingest -> train -> eval -> analyze/compare.

Every command validates its configuration before touching outputs and writes
files atomically (temp then rename). Configuration comes from an optional
TOML file (``--config``) whose values individual flags override.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

import numpy as np

from . import analysis, corpus, localization, metrics, synth, trainer
from .errors import VidgroundError
from .model import ModelConfig, init_model, load_checkpoint
from .trainer import TrainConfig


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as f:
        return tomllib.load(f)


def _pick(flag_value, cfg: dict, section: str, key: str, default):
    """Flag wins over config file wins over built-in default."""
    if flag_value is not None:
        return flag_value
    return cfg.get(section, {}).get(key, default)


def _atomic_write(path: Path, write_fn) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write_fn(tmp)
    os.replace(tmp, path)


def _sampler_config(args, cfg: dict) -> corpus.SamplerConfig:
    return corpus.SamplerConfig(
        window_len_s=float(_pick(args.window, cfg, "corpus", "window_len_s", 5.0)),
        n_candidates=int(_pick(args.candidates, cfg, "corpus", "n_candidates", 256)),
        seed=int(_pick(args.seed, cfg, "corpus", "seed", 0)),
        max_segments=int(_pick(getattr(args, "max_segments", None), cfg, "corpus", "max_segments", 10)),
    )


def _load_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _corpus_from_manifest(
    manifest: dict,
    manifest_path: Path,
    vocab: corpus.Vocabulary | None = None,
    sampler_override: dict | None = None,
) -> corpus.Corpus:
    sam = dict(manifest["sampler"])
    sam.update(sampler_override or {})
    cfg = corpus.SamplerConfig(
        window_len_s=sam["window_len_s"],
        n_candidates=sam["n_candidates"],
        seed=sam["seed"],
        max_segments=sam.get("max_segments", 10),
    )
    if vocab is None:
        vocab = corpus.Vocabulary.load_tsv(manifest_path.parent / "vocab.tsv")
    return corpus.load_corpus(
        manifest["corpus_dir"],
        cfg,
        min_count=manifest["min_count"],
        nonoverlap=sam.get("nonoverlap", False),
        vocab=vocab,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    n_cats = int(_pick(args.n_categories, cfg, "synth", "n_categories", 1))
    spec = synth.SyntheticSpec(
        n_videos=int(_pick(args.n_videos, cfg, "synth", "n_videos", 50)),
        duration_s=int(_pick(args.duration, cfg, "synth", "duration_s", 90)),
        vocab_size=int(_pick(args.vocab_size, cfg, "synth", "vocab_size", 200)),
        feature_dim=int(_pick(args.feature_dim, cfg, "synth", "feature_dim", 32)),
        signal_strength=float(_pick(args.signal, cfg, "synth", "signal_strength", 1.0)),
        tokens_per_second=int(_pick(args.tokens_per_second, cfg, "synth", "tokens_per_second", 2)),
        categories=synth.spread_categories(n_cats) if n_cats > 1 else [],
        edge_markers=bool(args.edge_markers or cfg.get("synth", {}).get("edge_markers", False)),
        seed=int(args.seed if args.seed is not None else cfg.get("synth", {}).get("seed", 0)),
    )
    summary = synth.generate_corpus(spec, args.out)
    print(f"synth: wrote {summary['n_videos']} videos to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    cfg = _load_config(args.config)
    sampler = _sampler_config(args, cfg)
    min_count = int(_pick(args.min_count, cfg, "corpus", "min_count", 5))
    nonoverlap = bool(args.nonoverlap or cfg.get("corpus", {}).get("nonoverlap", False))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    corp = corpus.load_corpus(args.corpus, sampler, min_count=min_count, nonoverlap=nonoverlap)
    manifest = {
        "corpus_dir": str(Path(args.corpus).resolve()),
        "sampler": {
            "window_len_s": sampler.window_len_s,
            "n_candidates": sampler.n_candidates,
            "seed": sampler.seed,
            "max_segments": sampler.max_segments,
            "nonoverlap": nonoverlap,
        },
        "min_count": min_count,
        "n_videos": len(corp.videos),
        "n_dropped": corp.n_dropped,
        "videos": [
            {
                "video_id": v.video_id,
                "duration_s": v.feature_track.duration_s,
                "n_segments": len(v.segments),
            }
            for v in corp.videos
        ],
        "vocab": {"size": len(corp.vocab), "hash": corp.vocab.hash()},
    }
    _atomic_write(out_dir / "vocab.tsv", corp.vocab.save_tsv)
    _atomic_write(
        out_dir / "manifest.json",
        lambda p: Path(p).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n"),
    )
    print(
        f"ingest: {len(corp.videos)} videos kept, {corp.n_dropped} dropped (no ASR-bearing "
        f"segments), vocab size {len(corp.vocab)}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    manifest_path = Path(args.manifest)
    manifest = _load_manifest(args.manifest)
    vocab = corpus.Vocabulary.load_tsv(manifest_path.parent / "vocab.tsv")
    if vocab.hash() != manifest["vocab"]["hash"]:
        raise VidgroundError("vocab.tsv next to the manifest does not match its recorded hash")
    corp = _corpus_from_manifest(manifest, manifest_path, vocab=vocab)

    seed = int(args.seed if args.seed is not None else cfg.get("train", {}).get("seed", 0))
    train_cfg = TrainConfig(
        margin=float(_pick(args.margin, cfg, "train", "margin", 0.1)),
        learning_rate=float(_pick(args.learning_rate, cfg, "train", "learning_rate", 0.001)),
        total_steps=int(_pick(args.steps, cfg, "train", "total_steps", 300_000)),
        negatives_per_positive=int(
            _pick(args.negatives, cfg, "train", "negatives_per_positive", 32)
        ),
        batch_positives=int(_pick(args.batch_positives, cfg, "train", "batch_positives", 128)),
        checkpoint_every=int(_pick(args.checkpoint_every, cfg, "train", "checkpoint_every", 10_000)),
        seed=seed,
    )
    feature_dim = corp.videos[0].feature_track.feature_dim
    model_cfg = ModelConfig(
        feature_dim=feature_dim,
        vocab_size=len(vocab),
        d_word=int(_pick(args.d_word, cfg, "model", "d_word", 300)),
        d_joint=int(_pick(args.d_joint, cfg, "model", "d_joint", 256)),
        text_hidden=tuple(cfg.get("model", {}).get("text_hidden", ())),
        visual_hidden=tuple(cfg.get("model", {}).get("visual_hidden", ())),
        window_len_s=corp.window_len_s,
        vocab_hash=vocab.hash(),
    )
    model = init_model(model_cfg, seed=seed)
    result = trainer.train(corp, model, train_cfg, args.out)
    print(
        f"train: {train_cfg.total_steps} steps, {len(result.checkpoint_paths)} checkpoints, "
        f"final checkpoint {result.checkpoint_paths[-1]}"
    )
    return 0


def _eval_corpus_and_model(args, sampler_override=None):
    manifest_path = Path(args.manifest)
    manifest = _load_manifest(args.manifest)
    vocab = corpus.Vocabulary.load_tsv(manifest_path.parent / "vocab.tsv")
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise VidgroundError(f"checkpoint not found: expected a GCK1 file at {checkpoint}")
    model = load_checkpoint(checkpoint, expected_vocab_hash=vocab.hash())
    corp = _corpus_from_manifest(
        manifest, manifest_path, vocab=vocab, sampler_override=sampler_override
    )
    return corp, model, manifest


def cmd_eval_auc(args) -> int:
    cfg = _load_config(args.config)
    override = {}
    if args.sampler is not None:
        override["nonoverlap"] = args.sampler == "nonoverlap"
    if args.seed is not None:
        override["seed"] = args.seed
    corp, model, manifest = _eval_corpus_and_model(args, sampler_override=override)

    workers = int(_pick(args.workers, cfg, "eval", "workers", 1))
    transpose = bool(args.transpose or cfg.get("eval", {}).get("transpose_segment_auc", False))
    min_videos = int(_pick(args.min_videos, cfg, "eval", "min_videos", 1))

    report = metrics.compute_grounding(
        model, corp.videos, workers=workers, transpose_segment_auc=transpose
    )
    corpus_dir = Path(manifest["corpus_dir"])
    labels_path = corpus_dir / "labels.tsv"
    labels = corpus.load_labels(labels_path) if labels_path.exists() else {}
    verticals_path = corpus_dir / "verticals.tsv"
    verticals = corpus.load_verticals(verticals_path) if verticals_path.exists() else {}

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "grounding.csv", lambda p: metrics.write_grounding_csv(p, report))
    _atomic_write(out_dir / "segments.csv", lambda p: metrics.write_segments_csv(p, report))
    if labels:
        cats = metrics.aggregate_by_category(report, labels, verticals, min_videos=min_videos)
        _atomic_write(out_dir / "categories.csv", lambda p: metrics.write_categories_csv(p, cats))
    scored = [v.intra_auc for v in report.videos if v.intra_auc is not None]
    mean_auc = float(np.mean(scored)) if scored else float("nan")
    print(
        f"eval-auc: {len(scored)} videos scored (mean intra AUC {mean_auc:.4f}), "
        f"{report.n_skipped} skipped with < 2 segments"
    )
    return 0


def cmd_eval_crosstask(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = _load_manifest(args.manifest)
    vocab = corpus.Vocabulary.load_tsv(manifest_path.parent / "vocab.tsv")
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise VidgroundError(f"checkpoint not found: expected a GCK1 file at {checkpoint}")
    model = load_checkpoint(checkpoint, expected_vocab_hash=vocab.hash())

    window = float(args.window) if args.window is not None else model.config.window_len_s
    tasks = localization.load_tasks(args.tasks, vocab)
    annotations = localization.load_annotations(args.annotations)
    corpus_dir = Path(manifest["corpus_dir"])
    needed = sorted({a.video_id for a in annotations})
    tracks = {
        vid: corpus.load_feature_track(corpus_dir / f"{vid}.gft", video_id=vid)
        for vid in needed
        if (corpus_dir / f"{vid}.gft").exists()
    }
    report = localization.evaluate_localization(model, tracks, tasks, annotations, window)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "recall.csv", lambda p: localization.write_recall_csv(p, report))
    print(
        f"eval-crosstask: {len(report.per_task)} tasks, macro recall "
        f"{report.macro_average:.4f}, {report.n_skipped} annotations skipped"
    )
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_config(args.config)
    corp, model, manifest = _eval_corpus_and_model(args)
    workers = int(_pick(args.workers, cfg, "eval", "workers", 1))
    top_k = int(_pick(args.top_k, cfg, "analyze", "top_k_unigrams", 500))
    min_doc_freq = int(_pick(args.min_doc_freq, cfg, "analyze", "min_doc_freq", 10))

    corpus_dir = Path(manifest["corpus_dir"])
    labels_path = corpus_dir / "labels.tsv"
    if not labels_path.exists():
        raise VidgroundError(f"analyze needs category labels; {labels_path} is missing")
    labels = corpus.load_labels(labels_path)

    report = metrics.compute_grounding(model, corp.videos, workers=workers)
    categories = args.category or sorted({c for cats in labels.values() for c in cats})

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cat in categories:
        rows = analysis.category_segment_rows(report, labels, cat)
        if not rows:
            print(f"analyze: category {cat}: no scored segments, skipping")
            continue
        design = analysis.build_design(rows, top_k_unigrams=top_k, min_doc_freq=min_doc_freq)
        full = analysis.fit_design(design)
        n_controls = len(analysis.CONTROL_COLUMNS)
        restricted = analysis.ols_fit(
            design.X[:, :n_controls], design.y, design.columns[:n_controls]
        )
        f_stat, p = analysis.f_test_nested(restricted, full)
        d1 = restricted.dof - full.dof
        _atomic_write(out_dir / f"analysis_{cat}.csv", lambda p_: analysis.write_analysis_csv(p_, full))
        _atomic_write(
            out_dir / f"ftest_{cat}.json",
            lambda p_: analysis.write_ftest_json(p_, f_stat, d1, full.dof, p),
        )
        print(f"analyze: {cat}: {len(rows)} segments, F={f_stat:.3f}, p={p:.3g}")
    return 0


def cmd_compare(args) -> int:
    a = metrics.read_grounding_csv(args.report_a)
    b = metrics.read_grounding_csv(args.report_b)
    include = None
    split = args.split or "all"
    if split != "all":
        if not args.i3:
            raise VidgroundError("--split needs --i3 with the instructional vote file")
        votes = corpus.load_instructional_votes(args.i3)
        include = metrics.instructional_majority(votes, split == "instructional")
    rate = metrics.win_rate(a, b, include=include)
    result = {"split": split, "win_rate_a_over_b": rate}
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(
            out, lambda p: Path(p).write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
        )
    print(f"compare: A beats B on {rate:.4f} of videos (split={split})")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file; flags override its values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory or file")
    p.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidground",
        description="Joint visual-text embedding training and grounding diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--n-videos", type=int, default=None)
    p.add_argument("--duration", type=int, default=None)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--feature-dim", type=int, default=None)
    p.add_argument("--signal", type=float, default=None)
    p.add_argument("--tokens-per-second", type=int, default=None)
    p.add_argument("--n-categories", type=int, default=None)
    p.add_argument("--edge-markers", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("ingest", help="scan a corpus, sample segments, build the vocabulary")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--window", type=float, default=None)
    p.add_argument("--candidates", type=int, default=None)
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--nonoverlap", action="store_true")
    p.add_argument("--max-segments", dest="max_segments", type=int, default=None)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train", help="train the joint embedding")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--negatives", type=int, default=None)
    p.add_argument("--batch-positives", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--d-joint", type=int, default=None)
    p.add_argument("--d-word", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval-auc", help="intra-video and segment AUC reports")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sampler", choices=["overlap", "nonoverlap"], default=None)
    p.add_argument("--min-videos", type=int, default=None)
    p.add_argument("--transpose", action="store_true",
                   help="rank captions per clip instead of clips per caption")
    p.set_defaults(fn=cmd_eval_auc)

    p = sub.add_parser("eval-crosstask", help="ordered-step localization recall")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tasks", required=True, help="tasks.tsv")
    p.add_argument("--annotations", required=True, help="annotations.tsv")
    p.add_argument("--window", type=float, default=None)
    p.set_defaults(fn=cmd_eval_crosstask)

    p = sub.add_parser("analyze", help="regress segment AUC on timing/length/unigram features")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--category", action="append", default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--min-doc-freq", type=int, default=None)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("compare", help="win rate of one grounding report over another")
    _add_common(p)
    p.add_argument("--report-a", required=True)
    p.add_argument("--report-b", required=True)
    p.add_argument("--i3", default=None, help="i3.tsv vote file for the split filter")
    p.add_argument("--split", choices=["all", "instructional", "non-instructional"], default=None)
    p.set_defaults(fn=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except VidgroundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
