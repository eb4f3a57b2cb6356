"""Synthetic corpus generator for fixtures and end-to-end checks.

Each second of a generated video speaks a few tokens; the second's feature
row is a noisy linear encoding of those tokens:

    features = s * mean(encoding rows of the spoken tokens) + (1 - s) * noise

so signal strength s = 1 means the features deterministically encode the
caption content and s = 0 means the two streams are independent. Categories
may carry their own signal strength, and an optional intro/outro mode speaks
distinctive fully-grounded marker tokens in the first and last deciles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import FeatureTrack, video_rng, write_feature_track


@dataclass
class CategoryTemplate:
    category_id: str
    signal: float
    vertical_id: str = "vert0"


@dataclass
class SyntheticSpec:
    n_videos: int = 50
    duration_s: int = 90
    vocab_size: int = 200
    feature_dim: int = 32
    signal_strength: float = 1.0
    tokens_per_second: int = 2
    categories: list[CategoryTemplate] = field(default_factory=list)
    edge_markers: bool = False  # speak marker tokens in the first/last decile
    edge_signal: float = 1.0
    marker_vocab: int = 12  # marker tokens per side
    second_label_every: int = 7  # every k-th video gets a 2nd category; 0 = off
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        if self.n_videos < 1 or self.duration_s < 1 or self.vocab_size < 1:
            raise ValueError("n_videos, duration_s and vocab_size must be positive")

    def resolved_categories(self) -> list[CategoryTemplate]:
        if self.categories:
            return self.categories
        return [CategoryTemplate("cat00", self.signal_strength)]


def spread_categories(n: int, lo: float = 0.15, hi: float = 1.0) -> list[CategoryTemplate]:
    """n categories with evenly spread signal strengths and 3 verticals."""
    if n == 1:
        levels = [hi]
    else:
        levels = list(np.linspace(lo, hi, n))
    return [
        CategoryTemplate(f"cat{k:02d}", float(levels[k]), vertical_id=f"vert{k % 3}")
        for k in range(n)
    ]


def generate_corpus(spec: SyntheticSpec, out_dir: str | Path) -> dict:
    """Write ``.gft``/``.asr.tsv`` pairs plus ``labels.tsv``, ``verticals.tsv``
    and ``i3.tsv``; byte-identical for identical specs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cats = spec.resolved_categories()

    general = [f"w{i:04d}" for i in range(spec.vocab_size)]
    intro = [f"intro{i:02d}" for i in range(spec.marker_vocab)] if spec.edge_markers else []
    outro = [f"outro{i:02d}" for i in range(spec.marker_vocab)] if spec.edge_markers else []
    all_tokens = general + intro + outro
    token_index = {t: i for i, t in enumerate(all_tokens)}

    master = np.random.default_rng(spec.seed)
    encoding = master.normal(size=(len(all_tokens), spec.feature_dim)) / np.sqrt(spec.feature_dim)

    edge = max(1, int(round(spec.duration_s * 0.1)))
    labels_rows: list[str] = []
    votes_rows: list[str] = []

    for v in range(spec.n_videos):
        vid = f"v{v:04d}"
        cat = cats[v % len(cats)]
        rng = video_rng(spec.seed, vid)

        features = np.empty((spec.duration_s, spec.feature_dim))
        asr_lines: list[str] = []
        for t in range(spec.duration_s):
            if spec.edge_markers and t < edge:
                pool, s = intro, spec.edge_signal
            elif spec.edge_markers and t >= spec.duration_s - edge:
                pool, s = outro, spec.edge_signal
            else:
                pool, s = general, cat.signal
            toks = [pool[rng.integers(len(pool))] for _ in range(spec.tokens_per_second)]
            enc = encoding[[token_index[tok] for tok in toks]].mean(axis=0)
            noise = rng.normal(size=spec.feature_dim) / np.sqrt(spec.feature_dim)
            features[t] = s * enc + (1.0 - s) * noise
            for tok in toks:
                asr_lines.append(f"{t * 1000}\t{(t + 1) * 1000}\t{tok}")

        write_feature_track(
            out_dir / f"{vid}.gft",
            FeatureTrack(video_id=vid, features=features.astype(np.float32)),
        )
        (out_dir / f"{vid}.asr.tsv").write_text("\n".join(asr_lines) + "\n", encoding="utf-8")

        cat_ids = [cat.category_id]
        if spec.second_label_every and v % spec.second_label_every == 3 and len(cats) > 1:
            cat_ids.append(cats[(v + 1) % len(cats)].category_id)
        labels_rows.append(f"{vid}\t{','.join(cat_ids)}")

        instructional = int((v % len(cats)) % 2 == 0)
        votes = [instructional] * 3
        if v % 11 == 5:  # rare single-dissent vote
            votes[2] = 1 - votes[2]
        votes_rows.append(f"{vid}\t{votes[0]}\t{votes[1]}\t{votes[2]}")

    (out_dir / "labels.tsv").write_text("\n".join(labels_rows) + "\n", encoding="utf-8")
    (out_dir / "verticals.tsv").write_text(
        "\n".join(f"{c.category_id}\t{c.vertical_id}" for c in cats) + "\n", encoding="utf-8"
    )
    (out_dir / "i3.tsv").write_text("\n".join(votes_rows) + "\n", encoding="utf-8")

    summary = {
        "n_videos": spec.n_videos,
        "duration_s": spec.duration_s,
        "feature_dim": spec.feature_dim,
        "vocab_size": spec.vocab_size,
        "n_marker_tokens": len(intro) + len(outro),
        "categories": [
            {"category_id": c.category_id, "signal": c.signal, "vertical_id": c.vertical_id}
            for c in cats
        ],
        "seed": spec.seed,
    }
    with open(out_dir / "synth.json", "w") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    return summary
