"""Feature files, ASR files, and fixed-length segment sampling.

Walks through the on-disk formats (.gft feature tracks, .asr.tsv token
files) and shows how windows get paired with the tokens whose midpoints
fall inside them.
"""

import tempfile
from pathlib import Path

import numpy as np

from vidground.corpus import (
    AsrToken,
    FeatureTrack,
    SamplerConfig,
    build_vocabulary,
    load_asr,
    load_feature_track,
    sample_nonoverlapping,
    sample_segments,
    write_feature_track,
)

work = Path(tempfile.mkdtemp(prefix="vidground_demo_"))
print(f"working in {work}\n")

# --- a 60-second video with 8-dim per-second features -----------------------
rng = np.random.default_rng(0)
track = FeatureTrack("demo", rng.normal(size=(60, 8)).astype(np.float32))
write_feature_track(work / "demo.gft", track)
back = load_feature_track(work / "demo.gft")
print(f"feature track: {back.duration_s} s x {back.feature_dim} dims, "
      f"round-trip exact: {np.array_equal(back.features, track.features)}")

# --- an ASR file: start_ms <TAB> end_ms <TAB> token --------------------------
lines = []
words = "we are going to sand the table top and then apply the first coat".split()
for i, w in enumerate(words):
    start = i * 4000
    lines.append(f"{start}\t{start + 900}\t{w.capitalize()}")
(work / "demo.asr.tsv").write_text("\n".join(lines) + "\n")
tokens = load_asr(work / "demo.asr.tsv")
print(f"\nloaded {len(tokens)} tokens, lowercased and time-sorted:")
print(" ", [t.text for t in tokens[:6]], "...")

# --- sample overlapping 5 s windows ------------------------------------------
cfg = SamplerConfig(window_len_s=5.0, n_candidates=32, seed=7)
outcome = sample_segments(track, tokens, cfg)
print(f"\nsampled {len(outcome.segments)} of 32 candidate windows "
      "(windows with no token midpoint inside are discarded)")
for seg in outcome.segments[:3]:
    print(f"  window [{seg.start_s:6.2f}, {seg.start_s + 5:6.2f}) -> "
          f"{[t.text for t in seg.tokens]}")

# --- the non-overlapping test-time mode --------------------------------------
out_no = sample_nonoverlapping(track, tokens, SamplerConfig(5.0, seed=7, max_segments=10))
starts = sorted(s.start_s for s in out_no.segments)
gaps_ok = all(b - a >= 5.0 for a, b in zip(starts, starts[1:]))
print(f"\nnon-overlapping mode: {len(out_no.segments)} windows, pairwise disjoint: {gaps_ok}")

# --- vocabulary ---------------------------------------------------------------
vocab = build_vocabulary([[t.text for t in tokens]], min_count=1)
print(f"\nvocabulary: {len(vocab)} entries (index 0 reserved for out-of-vocabulary)")
print(f"  'the' -> {vocab.index('the')}, 'zebra' (unseen) -> {vocab.index('zebra')}")
