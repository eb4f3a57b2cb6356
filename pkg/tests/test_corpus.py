import struct

import numpy as np
import pytest

from vidground.corpus import (
    AsrToken,
    FeatureTrack,
    SamplerConfig,
    Vocabulary,
    build_vocabulary,
    load_asr,
    load_feature_track,
    sample_nonoverlapping,
    sample_segments,
    write_feature_track,
    attach_token_ids,
)
from vidground.errors import DataError, FormatError, ParseError


def make_track(video_id="vid", duration=20, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureTrack(video_id, rng.normal(size=(duration, dim)).astype(np.float32))


def full_coverage_asr(duration, text="tok"):
    """One token per second, midpoint at t + 0.5."""
    return [AsrToken(text, t * 1000, (t + 1) * 1000) for t in range(duration)]


class TestFeatureFiles:
    def test_header_arithmetic(self, tmp_path):
        p = tmp_path / "a.gft"
        p.write_bytes(b"GFT1" + struct.pack("<II", 3, 4) + b"\x00" * 48)
        track = load_feature_track(p)
        assert track.features.shape == (3, 4)
        assert track.duration_s == 3

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "a.gft"
        p.write_bytes(b"GFT1" + struct.pack("<II", 3, 4) + b"\x00" * 40)
        with pytest.raises(FormatError):
            load_feature_track(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "a.gft"
        p.write_bytes(b"XXXX" + struct.pack("<II", 1, 1) + b"\x00" * 4)
        with pytest.raises(FormatError):
            load_feature_track(p)

    def test_non_finite_value(self, tmp_path):
        mat = np.array([[1.0, np.nan]], dtype="<f4")
        p = tmp_path / "a.gft"
        p.write_bytes(b"GFT1" + struct.pack("<II", 1, 2) + mat.tobytes())
        with pytest.raises(DataError):
            load_feature_track(p)

    def test_round_trip_bit_identical(self, tmp_path):
        track = make_track(duration=7, dim=5, seed=3)
        p = tmp_path / "rt.gft"
        write_feature_track(p, track)
        back = load_feature_track(p, video_id="vid")
        assert np.array_equal(back.features, track.features)
        assert back.features.dtype == np.float32


class TestAsrLoading:
    def test_single_token_lowercased(self, tmp_path):
        p = tmp_path / "a.asr.tsv"
        p.write_text("0\t500\tHello\n")
        toks = load_asr(p)
        assert toks == [AsrToken("hello", 0, 500)]

    def test_sorted_by_start(self, tmp_path):
        p = tmp_path / "a.asr.tsv"
        p.write_text("700\t900\tb\n0\t200\ta\n")
        assert [t.text for t in load_asr(p)] == ["a", "b"]

    def test_empty_file(self, tmp_path):
        p = tmp_path / "a.asr.tsv"
        p.write_text("")
        assert load_asr(p) == []

    def test_parse_error_carries_line_number(self, tmp_path):
        p = tmp_path / "a.asr.tsv"
        p.write_text("0\t500\tok\nxx\t900\tbad\n")
        with pytest.raises(ParseError, match=":2:"):
            load_asr(p)

    def test_start_after_end_rejected(self, tmp_path):
        p = tmp_path / "a.asr.tsv"
        p.write_text("900\t100\tbad\n")
        with pytest.raises(ParseError):
            load_asr(p)

    def test_punctuation_stripped_and_multiword_split(self, tmp_path):
        p = tmp_path / "a.asr.tsv"
        p.write_text('0\t500\t"Hello, world!"\n')
        assert [t.text for t in load_asr(p)] == ["hello", "world"]


class TestSampleSegments:
    def test_full_coverage_keeps_all_candidates(self):
        track = make_track(duration=30)
        asr = full_coverage_asr(30)
        out = sample_segments(track, asr, SamplerConfig(5.0, 256, seed=0))
        assert len(out.segments) == 256
        assert out.flag is None

    def test_no_asr_gives_empty(self):
        track = make_track(duration=30)
        out = sample_segments(track, [], SamplerConfig(5.0, 256, seed=0))
        assert out.segments == []

    def test_short_video_flagged(self):
        track = make_track(duration=3)
        out = sample_segments(track, full_coverage_asr(3), SamplerConfig(5.0, 16, seed=0))
        assert out.segments == []
        assert out.flag == "window-too-long"

    def test_midpoint_rule(self):
        # token [2000, 3000] ms has midpoint 2.5 s: inside [0, 5) but not [3, 8)
        track = make_track(duration=20)
        tok = AsrToken("x", 2000, 3000)
        cfg = SamplerConfig(5.0, 8, seed=1)
        out = sample_segments(track, [tok], cfg)
        for seg in out.segments:
            assert seg.start_s <= 2.5 < seg.start_s + 5.0
            assert seg.tokens == [tok]

    def test_membership_matches_bruteforce(self):
        rng = np.random.default_rng(7)
        track = make_track(duration=40)
        asr = [
            AsrToken(f"t{i}", int(s), int(s) + int(rng.integers(1, 3000)))
            for i, s in enumerate(sorted(rng.integers(0, 40_000, size=60)))
        ]
        out = sample_segments(track, asr, SamplerConfig(5.0, 64, seed=2))
        for seg in out.segments:
            expected = [
                t for t in asr
                if seg.start_s * 1000 <= (t.start_ms + t.end_ms) / 2 < (seg.start_s + 5.0) * 1000
            ]
            assert seg.tokens == sorted(expected, key=lambda t: (t.start_ms + t.end_ms) / 2)

    def test_same_seed_reproducible(self):
        track = make_track(duration=30)
        asr = full_coverage_asr(30)
        cfg = SamplerConfig(5.0, 64, seed=9)
        a = sample_segments(track, asr, cfg)
        b = sample_segments(track, asr, cfg)
        assert [s.start_s for s in a.segments] == [s.start_s for s in b.segments]

    def test_windows_fit_inside_video(self):
        track = make_track(duration=12)
        out = sample_segments(track, full_coverage_asr(12), SamplerConfig(5.0, 128, seed=4))
        for seg in out.segments:
            assert 0.0 <= seg.start_s
            assert seg.start_s + seg.window_len_s <= track.duration_s


class TestSampleNonoverlapping:
    def test_pairwise_disjoint(self):
        track = make_track(duration=60)
        out = sample_nonoverlapping(track, full_coverage_asr(60), SamplerConfig(5.0, seed=0))
        starts = [s.start_s for s in out.segments]
        for i in range(len(starts)):
            for j in range(i + 1, len(starts)):
                assert abs(starts[i] - starts[j]) >= 5.0

    def test_pigeonhole_single_segment(self):
        track = make_track(duration=6)
        out = sample_nonoverlapping(track, full_coverage_asr(6), SamplerConfig(5.0, seed=0))
        assert len(out.segments) == 1

    def test_asr_gap_constrains_segments(self):
        # tokens only inside [0, 5] s of a 100 s video: every window overlaps it
        track = make_track(duration=100)
        asr = [AsrToken("x", t * 1000, (t + 1) * 1000) for t in range(5)]
        out = sample_nonoverlapping(track, asr, SamplerConfig(5.0, seed=3))
        assert out.segments
        for seg in out.segments:
            # feasible starts: window [a, a+5) must contain a midpoint <= 4.5
            assert seg.start_s < 5.0

    def test_sampling_failed_flag(self):
        track = make_track(duration=30)
        out = sample_nonoverlapping(track, [], SamplerConfig(5.0, seed=0))
        assert out.segments == [] and out.flag == "sampling-failed"


class TestVocabulary:
    def test_min_count_threshold(self):
        vocab = build_vocabulary([["a", "a", "a", "b"]], min_count=2)
        assert "a" in vocab and vocab.index("a") == 1
        assert vocab.index("b") == 0  # out of vocabulary

    def test_min_count_one_indexes_everything(self):
        vocab = build_vocabulary([["x", "y"], ["z"]], min_count=1)
        assert len(vocab) == 4  # 3 tokens + OOV slot

    def test_order_deterministic_under_shuffle(self):
        streams = [["b", "a", "a"], ["c", "c", "b", "a"]]
        v1 = build_vocabulary(streams, min_count=1)
        v2 = build_vocabulary(list(reversed([list(reversed(s)) for s in streams])), min_count=1)
        assert v1.index_to_token == v2.index_to_token
        assert v1.hash() == v2.hash()

    def test_ties_broken_lexicographically(self):
        vocab = build_vocabulary([["b", "a", "b", "a"]], min_count=1)
        assert vocab.index_to_token[1:] == ["a", "b"]

    def test_tsv_round_trip(self, tmp_path):
        vocab = build_vocabulary([["a", "b", "a", "c", "c", "c"]], min_count=1)
        vocab.save_tsv(tmp_path / "v.tsv")
        back = Vocabulary.load_tsv(tmp_path / "v.tsv")
        assert back.index_to_token == vocab.index_to_token
        assert back.hash() == vocab.hash()

    def test_attach_token_ids(self):
        track = make_track(duration=10)
        out = sample_segments(track, full_coverage_asr(10, "word"), SamplerConfig(5.0, 4, seed=0))
        vocab = build_vocabulary([["word"] * 10], min_count=1)
        attach_token_ids(out.segments, vocab)
        for seg in out.segments:
            assert seg.token_ids == [vocab.index("word")] * len(seg.tokens)
