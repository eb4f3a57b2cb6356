"""Corpus ingestion: feature tracks, ASR tokens, segment sampling, vocabulary.

File formats handled here:
  * ``<video_id>.gft``      binary per-second feature matrix (magic ``GFT1``)
  * ``<video_id>.asr.tsv``  tab-separated ``start_ms<TAB>end_ms<TAB>token``
  * ``labels.tsv``          ``video_id<TAB>category_id[,category_id...]``
  * ``verticals.tsv``       ``category_id<TAB>vertical_id``
  * ``i3.tsv``              ``video_id<TAB>v1<TAB>v2<TAB>v3`` (binary votes)

Segment sampling pairs fixed-length windows with the ASR tokens whose
midpoints fall inside the window; windows without any token are discarded.
"""

from __future__ import annotations

import hashlib
import math
import string
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, FormatError, ParseError

GFT_MAGIC = b"GFT1"
OOV_TOKEN = "<unk>"
OOV_INDEX = 0

_PUNCT = string.punctuation + "‘’“”"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class FeatureTrack:
    """Per-second visual features: one ``feature_dim`` row per second of video."""

    video_id: str
    features: np.ndarray  # (duration_s, feature_dim) float32

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise DataError(f"{self.video_id}: features must be 2-D, got {self.features.ndim}-D")
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"{self.video_id}: feature track contains non-finite values")

    @property
    def duration_s(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class AsrToken:
    """A single recognized word with its time span in milliseconds."""

    text: str
    start_ms: int
    end_ms: int

    @property
    def midpoint_ms(self) -> float:
        return (self.start_ms + self.end_ms) / 2.0


@dataclass
class Segment:
    """Fixed-length window of a video paired with its co-occurring ASR tokens.

    ``token_ids`` is filled once a vocabulary exists (see
    :meth:`Vocabulary.encode`); before that it is ``None``.
    """

    video_id: str
    start_s: float
    window_len_s: float
    tokens: list[AsrToken]
    token_ids: list[int] | None = None


@dataclass
class SampleOutcome:
    """Segments produced by a sampler plus an optional diagnostic flag.

    ``flag`` is ``None`` on success, ``"window-too-long"`` when the video is
    shorter than the window, and ``"sampling-failed"`` when the
    non-overlapping sampler could not place a single ASR-bearing window.
    """

    segments: list[Segment]
    flag: str | None = None


@dataclass
class VideoRecord:
    video_id: str
    feature_track: FeatureTrack
    segments: list[Segment] = field(default_factory=list)
    categories: list[str] = field(default_factory=list)
    meta_category: str | None = None
    instructional_votes: tuple[int, int, int] | None = None


class Vocabulary:
    """Token index with frequency counts; index 0 is out-of-vocabulary.

    Tokens are ordered by descending corpus frequency, ties broken
    lexicographically, so construction is deterministic for any input order.
    """

    def __init__(self, tokens_in_order: Sequence[str], counts: dict[str, int]):
        self.index_to_token: list[str] = [OOV_TOKEN] + list(tokens_in_order)
        self.token_to_index: dict[str, int] = {
            tok: i for i, tok in enumerate(self.index_to_token) if i != OOV_INDEX
        }
        self.counts: dict[str, int] = dict(counts)

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, OOV_INDEX)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_index.get(t, OOV_INDEX) for t in tokens]

    def hash(self) -> str:
        """Stable digest of the token->index mapping (counts excluded)."""
        h = hashlib.sha256()
        for i, tok in enumerate(self.index_to_token):
            h.update(f"{i}\t{tok}\n".encode("utf-8"))
        return h.hexdigest()

    def save_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.index_to_token):
                if i == OOV_INDEX:
                    continue
                f.write(f"{tok}\t{i}\t{self.counts.get(tok, 0)}\n")

    @classmethod
    def load_tsv(cls, path: str | Path) -> "Vocabulary":
        tokens: list[str] = []
        counts: dict[str, int] = {}
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields")
                tok, idx_s, count_s = parts
                try:
                    idx, count = int(idx_s), int(count_s)
                except ValueError as e:
                    raise ParseError(f"{path}:{lineno}: non-integer index or count") from e
                if idx != len(tokens) + 1:
                    raise ParseError(f"{path}:{lineno}: indices must be contiguous from 1")
                tokens.append(tok)
                counts[tok] = count
        return cls(tokens, counts)


# ---------------------------------------------------------------------------
# Feature file IO (GFT1: magic | u32 rows | u32 dim | row-major f32 LE)
# ---------------------------------------------------------------------------

def write_feature_track(path: str | Path, track: FeatureTrack) -> None:
    rows, dim = track.features.shape
    with open(path, "wb") as f:
        f.write(GFT_MAGIC)
        f.write(struct.pack("<II", rows, dim))
        f.write(np.ascontiguousarray(track.features, dtype="<f4").tobytes())


def load_feature_track(path: str | Path, video_id: str | None = None) -> FeatureTrack:
    """Read a ``.gft`` file; the header declares (rows, dim)."""
    path = Path(path)
    if video_id is None:
        video_id = path.name.split(".")[0]
    raw = path.read_bytes()
    if raw[:4] != GFT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {GFT_MAGIC!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    rows, dim = struct.unpack("<II", raw[4:12])
    expected = rows * dim * 4
    payload = raw[12:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload length {len(payload)} != {rows}x{dim}x4 = {expected}"
        )
    mat = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)
    if not np.all(np.isfinite(mat)):
        raise DataError(f"{path}: non-finite feature value")
    return FeatureTrack(video_id=video_id, features=mat.copy())


# ---------------------------------------------------------------------------
# ASR loading
# ---------------------------------------------------------------------------

def normalize_token(raw: str) -> str:
    """Lowercase and strip surrounding punctuation; may return ''."""
    return raw.lower().strip(_PUNCT)


def load_asr(path: str | Path) -> list[AsrToken]:
    """Parse ``start_ms<TAB>end_ms<TAB>token`` lines into time-sorted tokens.

    Token fields containing whitespace are split into several tokens sharing
    the same span. Tokens that normalize to the empty string are dropped.
    """
    path = Path(path)
    tokens: list[AsrToken] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected start_ms<TAB>end_ms<TAB>token")
            try:
                start_ms, end_ms = int(parts[0]), int(parts[1])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: non-integer timestamp") from e
            if start_ms > end_ms:
                raise ParseError(f"{path}:{lineno}: start_ms {start_ms} > end_ms {end_ms}")
            for piece in parts[2].split():
                text = normalize_token(piece)
                if text:
                    tokens.append(AsrToken(text=text, start_ms=start_ms, end_ms=end_ms))
    tokens.sort(key=lambda t: t.start_ms)  # sort() is stable
    return tokens


# ---------------------------------------------------------------------------
# Segment sampling
# ---------------------------------------------------------------------------

@dataclass
class SamplerConfig:
    window_len_s: float = 5.0
    n_candidates: int = 256
    seed: int = 0
    # non-overlapping mode only:
    max_segments: int = 10
    max_attempts: int | None = None  # defaults to 50 * max_segments

    def attempts(self) -> int:
        return self.max_attempts if self.max_attempts is not None else 50 * self.max_segments


def video_rng(seed: int, video_id: str) -> np.random.Generator:
    """Per-video generator derived from the corpus seed; stable across runs
    and across any parallel schedule over videos."""
    digest = hashlib.sha256(f"{seed}:{video_id}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _tokens_in_window(
    midpoints: np.ndarray, order: np.ndarray, start_s: float, window_len_s: float
) -> np.ndarray:
    """Indices (into the original token list) whose midpoint lies in
    [start_s, start_s + window_len_s), in time order."""
    lo_ms = start_s * 1000.0
    hi_ms = (start_s + window_len_s) * 1000.0
    sorted_mid = midpoints[order]
    lo = np.searchsorted(sorted_mid, lo_ms, side="left")
    hi = np.searchsorted(sorted_mid, hi_ms, side="left")
    return order[lo:hi]


def _midpoint_index(asr: Sequence[AsrToken]) -> tuple[np.ndarray, np.ndarray]:
    midpoints = np.array([t.midpoint_ms for t in asr], dtype=np.float64)
    order = np.argsort(midpoints, kind="stable")
    return midpoints, order


def _make_segment(
    video_id: str, start_s: float, window_len_s: float, asr: Sequence[AsrToken], idx: np.ndarray
) -> Segment:
    return Segment(
        video_id=video_id,
        start_s=float(start_s),
        window_len_s=float(window_len_s),
        tokens=[asr[i] for i in idx],
    )


def sample_segments(
    track: FeatureTrack, asr: Sequence[AsrToken], cfg: SamplerConfig
) -> SampleOutcome:
    """Draw ``n_candidates`` window starts uniformly from
    [0, duration - window] and keep the windows that carry at least one token.

    A token belongs to a window iff its midpoint lies in
    [start, start + window); windows may overlap.
    """
    duration = track.duration_s
    if duration < cfg.window_len_s:
        return SampleOutcome(segments=[], flag="window-too-long")
    if not asr:
        return SampleOutcome(segments=[])
    rng = video_rng(cfg.seed, track.video_id)
    starts = rng.uniform(0.0, duration - cfg.window_len_s, size=cfg.n_candidates)
    midpoints, order = _midpoint_index(asr)
    segments = []
    for start in starts:
        idx = _tokens_in_window(midpoints, order, start, cfg.window_len_s)
        if idx.size:
            segments.append(_make_segment(track.video_id, start, cfg.window_len_s, asr, idx))
    return SampleOutcome(segments=segments)


def sample_nonoverlapping(
    track: FeatureTrack, asr: Sequence[AsrToken], cfg: SamplerConfig
) -> SampleOutcome:
    """Rejection-sample up to ``max_segments`` pairwise-disjoint ASR-bearing
    windows; gives up after ``max_attempts`` draws and returns what it found."""
    duration = track.duration_s
    if duration < cfg.window_len_s:
        return SampleOutcome(segments=[], flag="window-too-long")
    if not asr:
        return SampleOutcome(segments=[], flag="sampling-failed")
    rng = video_rng(cfg.seed, track.video_id)
    midpoints, order = _midpoint_index(asr)
    accepted_starts: list[float] = []
    segments: list[Segment] = []
    for _ in range(cfg.attempts()):
        if len(segments) >= cfg.max_segments:
            break
        start = rng.uniform(0.0, duration - cfg.window_len_s)
        # [a, a+w) and [b, b+w) are disjoint iff |a - b| >= w
        if any(abs(start - s) < cfg.window_len_s for s in accepted_starts):
            continue
        idx = _tokens_in_window(midpoints, order, start, cfg.window_len_s)
        if idx.size == 0:
            continue
        accepted_starts.append(start)
        segments.append(_make_segment(track.video_id, start, cfg.window_len_s, asr, idx))
    if not segments:
        return SampleOutcome(segments=[], flag="sampling-failed")
    return SampleOutcome(segments=segments)


# ---------------------------------------------------------------------------
# Vocabulary construction
# ---------------------------------------------------------------------------

def build_vocabulary(
    corpus: Iterable[Iterable[str]], min_count: int = 5
) -> Vocabulary:
    """Index every token whose corpus frequency is >= ``min_count``.

    ``corpus`` is an iterable of per-video token streams. Order of iteration
    does not matter: tokens are ranked by descending count, lexicographic on
    ties. Everything below the threshold maps to index 0.
    """
    counts: Counter[str] = Counter()
    n_streams = 0
    for stream in corpus:
        n_streams += 1
        counts.update(stream)
    if n_streams == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = [(tok, c) for tok, c in counts.items() if c >= min_count]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return Vocabulary([tok for tok, _ in kept], {tok: c for tok, c in kept})


def attach_token_ids(segments: Iterable[Segment], vocab: Vocabulary) -> None:
    for seg in segments:
        seg.token_ids = vocab.encode(t.text for t in seg.tokens)


# ---------------------------------------------------------------------------
# Label / vertical / vote files
# ---------------------------------------------------------------------------

def load_labels(path: str | Path) -> dict[str, list[str]]:
    """``labels.tsv``: video_id -> list of category ids (comma separated)."""
    out: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected video_id<TAB>categories")
            cats = [c for c in parts[1].split(",") if c]
            if not cats:
                raise ParseError(f"{path}:{lineno}: empty category list")
            out[parts[0]] = cats
    return out


def load_verticals(path: str | Path) -> dict[str, str]:
    """``verticals.tsv``: category_id -> vertical (meta-category) id."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected category_id<TAB>vertical_id")
            out[parts[0]] = parts[1]
    return out


def load_instructional_votes(path: str | Path) -> dict[str, tuple[int, int, int]]:
    """``i3.tsv``: video_id -> three binary instructional-ness judgments."""
    out: dict[str, tuple[int, int, int]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected video_id and 3 votes")
            try:
                votes = tuple(int(v) for v in parts[1:])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: non-integer vote") from e
            if any(v not in (0, 1) for v in votes):
                raise ParseError(f"{path}:{lineno}: votes must be 0 or 1")
            out[parts[0]] = votes  # type: ignore[assignment]
    return out


# ---------------------------------------------------------------------------
# Corpus directory loading
# ---------------------------------------------------------------------------

def discover_video_ids(corpus_dir: str | Path) -> list[str]:
    """Video ids are the stems of ``*.gft`` files, sorted."""
    return sorted(p.name[: -len(".gft")] for p in Path(corpus_dir).glob("*.gft"))


def load_video(
    corpus_dir: str | Path,
    video_id: str,
    cfg: SamplerConfig,
    nonoverlap: bool = False,
) -> tuple[VideoRecord, SampleOutcome]:
    """Load one video's features and ASR and sample its segments."""
    corpus_dir = Path(corpus_dir)
    track = load_feature_track(corpus_dir / f"{video_id}.gft", video_id=video_id)
    asr_path = corpus_dir / f"{video_id}.asr.tsv"
    asr = load_asr(asr_path) if asr_path.exists() else []
    sampler = sample_nonoverlapping if nonoverlap else sample_segments
    outcome = sampler(track, asr, cfg)
    record = VideoRecord(video_id=video_id, feature_track=track, segments=outcome.segments)
    return record, outcome


@dataclass
class Corpus:
    """All retained videos plus the shared vocabulary."""

    videos: list[VideoRecord]
    vocab: Vocabulary
    window_len_s: float
    n_dropped: int = 0  # videos discarded for having no ASR-bearing segment

    def by_id(self) -> dict[str, VideoRecord]:
        return {v.video_id: v for v in self.videos}

    def iter_segments(self) -> Iterator[Segment]:
        for v in self.videos:
            yield from v.segments


def load_corpus(
    corpus_dir: str | Path,
    cfg: SamplerConfig,
    min_count: int = 5,
    nonoverlap: bool = False,
    vocab: Vocabulary | None = None,
) -> Corpus:
    """Ingest a corpus directory: sample segments, drop ASR-less videos,
    build (or reuse) the vocabulary and attach token ids everywhere.

    Pure per-video work; videos are processed in sorted id order so the
    result is identical for any parallel schedule.
    """
    corpus_dir = Path(corpus_dir)
    ids = discover_video_ids(corpus_dir)
    if not ids:
        raise DataError(f"no .gft files found in {corpus_dir}")

    labels_path = corpus_dir / "labels.tsv"
    labels = load_labels(labels_path) if labels_path.exists() else {}
    verticals_path = corpus_dir / "verticals.tsv"
    verticals = load_verticals(verticals_path) if verticals_path.exists() else {}
    votes_path = corpus_dir / "i3.tsv"
    votes = load_instructional_votes(votes_path) if votes_path.exists() else {}

    sampler = sample_nonoverlapping if nonoverlap else sample_segments
    videos: list[VideoRecord] = []
    token_streams: list[list[str]] = []
    n_dropped = 0
    for vid in ids:
        track = load_feature_track(corpus_dir / f"{vid}.gft", video_id=vid)
        asr_path = corpus_dir / f"{vid}.asr.tsv"
        asr = load_asr(asr_path) if asr_path.exists() else []
        outcome = sampler(track, asr, cfg)
        if not outcome.segments:
            n_dropped += 1
            continue
        record = VideoRecord(video_id=vid, feature_track=track, segments=outcome.segments)
        record.categories = labels.get(vid, [])
        if record.categories:
            record.meta_category = verticals.get(record.categories[0])
        record.instructional_votes = votes.get(vid)
        videos.append(record)
        token_streams.append([t.text for t in asr])

    if not videos:
        raise DataError(f"{corpus_dir}: every video was dropped (no ASR-bearing segments)")

    if vocab is None:
        vocab = build_vocabulary(token_streams, min_count=min_count)
    for v in videos:
        attach_token_ids(v.segments, vocab)
    return Corpus(videos=videos, vocab=vocab, window_len_s=cfg.window_len_s, n_dropped=n_dropped)


def segment_feature_window(track: FeatureTrack, segment: Segment) -> np.ndarray:
    """Feature rows whose second-index lies in [floor(start), floor(start)+window)."""
    lo = int(math.floor(segment.start_s))
    hi = lo + int(math.ceil(segment.window_len_s))
    return track.features[lo:hi]
