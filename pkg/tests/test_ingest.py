"""Annotation parsing, boxes, track merging, label resampling, MFCC, chunking."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asdkit.ingest import (
    AnnotationFormatError,
    AnnotationRecord,
    BoundingBox,
    FaceTrack,
    MFCC_FRAMES,
    Scene,
    SpeechLabel,
    chunk_for_inference,
    compute_mfcc,
    expand_box,
    iou,
    merge_tracks,
    parse_annotations,
    resample_labels,
)

CSV_HEADER = "video_id,timestamp,x1,y1,x2,y2,label,entity_id\n"


def make_track(entity, first, boxes, labels_av=None):
    n = len(boxes)
    return FaceTrack(
        entity_id=entity,
        first_frame=first,
        boxes=np.asarray(boxes, dtype=np.float32),
        crops=np.zeros((n, 144, 144, 3), dtype=np.uint8),
        labels_v=np.zeros(n, dtype=np.uint8) if labels_av is None else np.asarray(labels_av, np.uint8),
        labels_av=np.zeros(n, dtype=np.uint8) if labels_av is None else np.asarray(labels_av, np.uint8),
    )


boxes_strategy = st.builds(
    lambda x1, y1, w, h: BoundingBox(x1, y1, min(1.0, x1 + w), min(1.0, y1 + h)),
    st.floats(0, 0.8),
    st.floats(0, 0.8),
    st.floats(0.05, 0.2),
    st.floats(0.05, 0.2),
)


class TestParseAnnotations:
    def test_single_row(self):
        records = parse_annotations(CSV_HEADER + "v1,900.0,0.1,0.1,0.3,0.4,SPEAKING_AUDIBLE,v1_e0\n")
        assert len(records) == 1
        rec = records[0]
        assert rec.video_id == "v1"
        assert rec.timestamp == 900.0
        assert rec.label is SpeechLabel.SPEAKING_AUDIBLE
        assert rec.label.audiovisual == 1 and rec.label.visual == 1
        assert rec.box == BoundingBox(0.1, 0.1, 0.3, 0.4)

    def test_not_speaking_maps_to_negative_labels(self):
        records = parse_annotations(CSV_HEADER + "v1,1.0,0.1,0.1,0.3,0.4,NOT_SPEAKING,e0\n")
        assert records[0].label.visual == 0
        assert records[0].label.audiovisual == 0

    def test_speaking_not_audible_is_visual_only(self):
        records = parse_annotations(CSV_HEADER + "v1,1.0,0.1,0.1,0.3,0.4,SPEAKING_NOT_AUDIBLE,e0\n")
        assert records[0].label.visual == 1
        assert records[0].label.audiovisual == 0

    def test_inverted_coordinates_rejected_with_line_number(self, caplog):
        text = CSV_HEADER + "v1,1.0,0.5,0.1,0.2,0.4,NOT_SPEAKING,e0\n"
        with caplog.at_level("WARNING"):
            records = parse_annotations(text)
        assert records == []
        assert any("line 2" in m and "coordinate order" in m for m in caplog.messages)

    def test_out_of_range_coordinates_clamped_with_warning(self, caplog):
        text = CSV_HEADER + "v1,1.0,-0.2,0.1,0.3,1.7,SPEAKING_AUDIBLE,e0\n"
        with caplog.at_level("WARNING"):
            records = parse_annotations(text)
        assert records[0].box == BoundingBox(0.0, 0.1, 0.3, 1.0)
        assert any("clamped" in m for m in caplog.messages)

    def test_unknown_label_rejected(self, caplog):
        with caplog.at_level("WARNING"):
            records = parse_annotations(CSV_HEADER + "v1,1.0,0.1,0.1,0.3,0.4,MAYBE,e0\n")
        assert records == []
        assert any("unknown label" in m for m in caplog.messages)

    def test_missing_column_raises(self):
        with pytest.raises(AnnotationFormatError, match="entity_id"):
            parse_annotations("video_id,timestamp,x1,y1,x2,y2,label\nv,1,0,0,1,1,NOT_SPEAKING\n")


class TestIou:
    def test_identical_boxes(self):
        b = BoundingBox(0.2, 0.2, 0.5, 0.6)
        assert iou(b, b) == pytest.approx(1.0)

    def test_disjoint_boxes(self):
        assert iou(BoundingBox(0, 0, 0.1, 0.1), BoundingBox(0.5, 0.5, 0.6, 0.6)) == 0.0

    def test_hand_computed_overlap(self):
        # intersection 0.1 x 0.2 = 0.02; union 0.04 + 0.04 - 0.02 = 0.06
        a = BoundingBox(0.0, 0.0, 0.2, 0.2)
        b = BoundingBox(0.1, 0.0, 0.3, 0.2)
        assert iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    @given(boxes_strategy, boxes_strategy)
    @settings(max_examples=200, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(iou(b, a), abs=1e-12)


class TestExpandBox:
    def test_scales_width_about_center(self):
        out = expand_box(BoundingBox(0.4, 0.4, 0.6, 0.6), 1.3)
        assert out.x1 == pytest.approx(0.37)
        assert out.y1 == pytest.approx(0.37)
        assert out.x2 == pytest.approx(0.63)
        assert out.y2 == pytest.approx(0.63)

    def test_identity_factor(self):
        b = BoundingBox(0.1, 0.2, 0.5, 0.7)
        out = expand_box(b, 1.0)
        assert (out.x1, out.y1, out.x2, out.y2) == pytest.approx((b.x1, b.y1, b.x2, b.y2))

    def test_clamped_at_frame_edge(self):
        out = expand_box(BoundingBox(0.0, 0.0, 0.4, 0.4), 1.5)
        assert out.x1 == 0.0 and out.y1 == 0.0
        assert out.x2 <= 1.0 and out.y2 <= 1.0

    @given(boxes_strategy, st.floats(1.05, 1.6))
    @settings(max_examples=200, deadline=None)
    def test_inverse_roundtrip_without_clamping(self, b, f):
        grown = expand_box(b, f)
        touched_edge = grown.x1 == 0.0 or grown.y1 == 0.0 or grown.x2 == 1.0 or grown.y2 == 1.0
        if not touched_edge:
            back = expand_box(grown, 1.0 / f)
            for got, want in zip(
                (back.x1, back.y1, back.x2, back.y2), (b.x1, b.y1, b.x2, b.y2)
            ):
                assert got == pytest.approx(want, abs=1e-9)


class TestMergeTracks:
    def test_abutting_high_overlap_merges(self):
        a = make_track("e0", 0, [[0.1, 0.1, 0.3, 0.3]] * 5)
        b = make_track("e1", 5, [[0.1, 0.1, 0.3, 0.3]] * 4)
        merged = merge_tracks([a, b], threshold=0.8)
        assert len(merged) == 1
        assert merged[0].entity_id == "e0"
        assert len(merged[0]) == 9
        assert merged[0].first_frame == 0

    def test_low_overlap_stays_separate(self):
        a = make_track("e0", 0, [[0.1, 0.1, 0.3, 0.3]] * 5)
        b = make_track("e1", 5, [[0.22, 0.1, 0.42, 0.3]] * 4)  # IoU = 0.08/0.32 = 0.25
        merged = merge_tracks([a, b], threshold=0.8)
        assert len(merged) == 2

    def test_transitive_chain_merges_to_one(self):
        box = [[0.1, 0.1, 0.3, 0.3]]
        a = make_track("e0", 0, box * 3)
        b = make_track("e1", 3, box * 3)
        c = make_track("e2", 6, box * 3)
        merged = merge_tracks([a, b, c], threshold=0.8)
        assert len(merged) == 1
        assert len(merged[0]) == 9

    def test_total_frames_preserved(self):
        rng = np.random.default_rng(0)
        tracks = []
        cursor = 0
        for k in range(6):
            n = int(rng.integers(2, 6))
            x1 = float(rng.uniform(0, 0.6))
            tracks.append(make_track(f"e{k}", cursor, [[x1, 0.1, x1 + 0.2, 0.3]] * n))
            cursor += n + int(rng.integers(0, 2))
        merged = merge_tracks(tracks)
        assert sum(len(t) for t in merged) == sum(len(t) for t in tracks)

    def test_same_entity_temporal_overlap_is_corrupt(self):
        a = make_track("e0", 0, [[0.1, 0.1, 0.3, 0.3]] * 5)
        b = make_track("e0", 3, [[0.1, 0.1, 0.3, 0.3]] * 5)
        with pytest.raises(ValueError, match="overlapping"):
            merge_tracks([a, b])

    def test_gap_between_tracks_prevents_merge(self):
        a = make_track("e0", 0, [[0.1, 0.1, 0.3, 0.3]] * 3)
        b = make_track("e1", 5, [[0.1, 0.1, 0.3, 0.3]] * 3)  # 1-frame gap
        assert len(merge_tracks([a, b])) == 2


def _rec(ts, label, entity="e0"):
    return AnnotationRecord(
        video_id="v", timestamp=ts, box=BoundingBox(0.1, 0.1, 0.3, 0.3), label=label, entity_id=entity
    )


class TestResampleLabels:
    def test_nearest_wins(self):
        records = [_rec(0.00, SpeechLabel.SPEAKING_AUDIBLE), _rec(0.10, SpeechLabel.NOT_SPEAKING)]
        first, labels_v, labels_av = resample_labels(records, fps=25, first_frame=1, n_frames=1)
        # frame 1 sits at 0.04 s: nearer to 0.00 than to 0.10
        assert labels_av[0] == 1

    def test_tie_breaks_toward_earlier_record(self):
        records = [_rec(0.00, SpeechLabel.SPEAKING_AUDIBLE), _rec(0.08, SpeechLabel.NOT_SPEAKING)]
        # frame 1 at 0.04 s is exactly midway
        _, _, labels_av = resample_labels(records, fps=25, first_frame=1, n_frames=1)
        assert labels_av[0] == 1

    def test_empty_records_error(self):
        with pytest.raises(ValueError):
            resample_labels([])

    def test_matches_bruteforce_nearest_on_30hz_records(self):
        rng = np.random.default_rng(7)
        times = np.arange(30) / 30.0
        labels = [SpeechLabel.SPEAKING_AUDIBLE if rng.random() < 0.5 else SpeechLabel.NOT_SPEAKING for _ in times]
        records = [_rec(t, lab) for t, lab in zip(times, labels)]
        first, labels_v, labels_av = resample_labels(records, fps=25)
        assert first == 0
        assert len(labels_av) == 25
        for k in range(25):
            t = k / 25.0
            dists = [abs(t - r.timestamp) for r in records]
            best = min(range(len(records)), key=lambda i: (dists[i], records[i].timestamp))
            assert labels_av[k] == records[best].label.audiovisual

    @given(st.lists(st.floats(0, 5), min_size=1, max_size=20), st.integers(0, 60))
    @settings(max_examples=100, deadline=None)
    def test_property_matches_bruteforce(self, times, n_frames):
        times = sorted(set(round(t, 3) for t in times))
        rng = np.random.default_rng(len(times))
        records = [
            _rec(t, SpeechLabel.SPEAKING_AUDIBLE if rng.random() < 0.5 else SpeechLabel.NOT_SPEAKING)
            for t in times
        ]
        if n_frames == 0:
            return
        _, _, labels_av = resample_labels(records, fps=25, first_frame=0, n_frames=n_frames)
        for k in range(n_frames):
            t = k / 25.0
            best = min(records, key=lambda r: (abs(t - r.timestamp), r.timestamp))
            assert labels_av[k] == best.label.audiovisual


class TestComputeMfcc:
    def test_silence_gives_constant_columns(self):
        wave = np.zeros(16000, dtype=np.float32)
        out = compute_mfcc(wave, 16000, end_time=0.9).coefficients
        assert out.shape == (13, MFCC_FRAMES)
        assert np.allclose(out, out[:, :1])

    def test_zero_end_time_equals_silence(self):
        rng = np.random.default_rng(0)
        wave = rng.normal(0, 0.1, 16000).astype(np.float32)
        at_zero = compute_mfcc(wave, 16000, end_time=0.0).coefficients
        silence = compute_mfcc(np.zeros(16000, np.float32), 16000, end_time=0.9).coefficients
        assert np.allclose(at_zero, silence)

    def test_distinct_tones_distinct_coefficients(self):
        t = np.arange(16000) / 16000.0
        tone_a = np.sin(2 * np.pi * 440 * t).astype(np.float32)
        tone_b = np.sin(2 * np.pi * 880 * t).astype(np.float32)
        ca = compute_mfcc(tone_a, 16000, 0.9).coefficients
        cb = compute_mfcc(tone_b, 16000, 0.9).coefficients
        assert np.linalg.norm(ca - cb) > 1.0

    def test_low_sample_rate_rejected(self):
        with pytest.raises(ValueError, match="sample rate"):
            compute_mfcc(np.zeros(4000, np.float32), 4000, 0.5)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        wave = rng.normal(0, 0.1, 16000).astype(np.float32)
        a = compute_mfcc(wave, 16000, 0.7).coefficients
        b = compute_mfcc(wave.copy(), 16000, 0.7).coefficients
        assert np.array_equal(a, b)


def _scene(T, n_tracks=1, sr=16000):
    tracks = [make_track(f"e{k}", 0, [[0.1, 0.1, 0.3, 0.3]] * T) for k in range(n_tracks)]
    wave = np.zeros(int(T / 25 * sr), dtype=np.float32)
    return Scene(scene_id="s", tracks=tracks, waveform=wave, sample_rate=sr, n_frames=T)


class TestChunkForInference:
    def test_greedy_split_lengths(self):
        chunks = chunk_for_inference(_scene(100), 40)
        assert [c.n_frames for c in chunks] == [40, 40, 20]

    def test_short_scene_single_chunk(self):
        scene = _scene(30)
        chunks = chunk_for_inference(scene, 100)
        assert len(chunks) == 1 and chunks[0] is scene

    def test_coverage_identity(self):
        for T, m in [(100, 40), (28, 28), (97, 33)]:
            chunks = chunk_for_inference(_scene(T), m)
            covered = []
            for c in chunks:
                covered.extend(range(c.frame_offset, c.frame_offset + c.n_frames))
            assert covered == list(range(T))

    def test_max_frames_floor(self):
        with pytest.raises(ValueError):
            chunk_for_inference(_scene(100), 27)

    def test_slice_keeps_audio_context(self):
        scene = _scene(100)
        chunk = chunk_for_inference(scene, 50)[1]
        assert chunk.audio_offset == pytest.approx(-0.4)
        assert chunk.frame_offset == 50
