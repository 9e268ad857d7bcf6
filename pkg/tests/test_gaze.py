import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gazedet import gaze as gz
from gazedet.gaze import Fixation, GazeSample


def make_stream(points, t0=0.0, dt=10.0):
    return [GazeSample(t0 + i * dt, x, y) for i, (x, y) in enumerate(points)]


def two_cluster_stream(seed=0, c1=(50.0, 50.0), c2=(200.0, 120.0), noise=1.0):
    """Two 200 ms dwells joined by a 40 ms saccade sweep."""
    rng = np.random.default_rng(seed)
    pts = [(c1[0] + rng.normal(0, noise), c1[1] + rng.normal(0, noise)) for _ in range(21)]
    for k in range(4):
        f = (k + 1) / 5
        pts.append((c1[0] + f * (c2[0] - c1[0]), c1[1] + f * (c2[1] - c1[1])))
    pts += [(c2[0] + rng.normal(0, noise), c2[1] + rng.normal(0, noise)) for _ in range(21)]
    return make_stream(pts)


def idt_oracle(samples, dispersion, min_duration):
    """Brute-force windowing re-implementation; spans recomputed from scratch."""
    out = []
    i = 0
    while i < len(samples):
        j = i
        while j + 1 < len(samples):
            win = samples[i : j + 2]
            xs = [s.x_px for s in win]
            ys = [s.y_px for s in win]
            if (max(xs) - min(xs)) + (max(ys) - min(ys)) > dispersion:
                break
            j += 1
        win = samples[i : j + 1]
        if win[-1].t_ms - win[0].t_ms >= min_duration:
            out.append((
                sum(s.x_px for s in win) / len(win),
                sum(s.y_px for s in win) / len(win),
                win[0].t_ms,
                win[-1].t_ms,
            ))
        i = j + 1
    return out


class TestFilterGaze:
    def test_all_inside_unchanged(self):
        stream = make_stream([(10, 10), (20, 30)])
        assert gz.filter_gaze(stream, 512, 512) == stream

    def test_far_outside_dropped(self):
        stream = [GazeSample(i * 10.0, -500.0, 100.0) for i in range(5)]
        assert gz.filter_gaze(stream, 512, 512, margin_px=0.0) == []

    def test_mixed_preserves_order(self):
        stream = []
        for i in range(10):
            stream.append(GazeSample(i * 10.0, 5.0 + i, 5.0, valid=i % 3 != 0))
        out = gz.filter_gaze(stream, 512, 512)
        assert len(out) == 6  # i in {0,3,6,9} invalid
        assert [s.t_ms for s in out] == sorted(s.t_ms for s in out)

    def test_idempotent(self):
        stream = make_stream([(10, 10), (-40, 10), (600, 10)])
        once = gz.filter_gaze(stream, 512, 512, margin_px=5)
        assert gz.filter_gaze(once, 512, 512, margin_px=5) == once


class TestDetectFixations:
    def test_degenerate_cluster(self):
        stream = [GazeSample(i * 300.0 / 29, 100.0, 100.0) for i in range(30)]
        fixes = gz.detect_fixations(stream, 25.0, 100.0)
        assert len(fixes) == 1
        f = fixes[0]
        assert (f.cx_px, f.cy_px) == (100.0, 100.0)
        assert np.isclose(f.duration_ms, 300.0)

    def test_empty_input(self):
        assert gz.detect_fixations([], 25.0, 100.0) == []

    def test_two_planted_clusters(self):
        fixes = gz.detect_fixations(two_cluster_stream(), 25.0, 100.0)
        assert len(fixes) == 2
        assert np.hypot(fixes[0].cx_px - 50, fixes[0].cy_px - 50) < 2
        assert np.hypot(fixes[1].cx_px - 200, fixes[1].cy_px - 120) < 2

    def test_unsorted_input_errors(self):
        stream = [GazeSample(10.0, 1, 1), GazeSample(5.0, 1, 1)]
        with pytest.raises(ValueError, match="increasing"):
            gz.detect_fixations(stream, 25.0, 100.0)

    def test_output_time_ordered_non_overlapping(self):
        fixes = gz.detect_fixations(two_cluster_stream(3), 25.0, 100.0)
        for a, b in zip(fixes, fixes[1:]):
            assert a.end_ms < b.start_ms

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(0, 200))
        xs = np.cumsum(rng.uniform(-15, 15, size=n)) + 100
        ys = np.cumsum(rng.uniform(-15, 15, size=n)) + 100
        stream = [GazeSample(i * 10.0, float(x), float(y)) for i, (x, y) in enumerate(zip(xs, ys))]
        got = gz.detect_fixations(stream, 30.0, 80.0)
        expected = idt_oracle(stream, 30.0, 80.0)
        assert len(got) == len(expected)
        for f, (cx, cy, s, e) in zip(got, expected):
            assert np.isclose(f.cx_px, cx) and np.isclose(f.cy_px, cy)
            assert f.start_ms == s and f.end_ms == e

    @given(st.integers(0, 2**31 - 1), st.floats(50, 500))
    @settings(max_examples=40, deadline=None)
    def test_min_duration_monotone(self, seed, min_dur):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 150))
        xs = np.cumsum(rng.uniform(-10, 10, size=n))
        ys = np.cumsum(rng.uniform(-10, 10, size=n))
        stream = [GazeSample(i * 10.0, float(x), float(y)) for i, (x, y) in enumerate(zip(xs, ys))]
        low = gz.detect_fixations(stream, 30.0, min_dur)
        high = gz.detect_fixations(stream, 30.0, min_dur * 2)
        assert len(high) <= len(low)


class TestRenderHeatmap:
    def test_empty_gives_zero_map(self):
        fmap = gz.render_heatmap([], 32, 32, sigma_px=5.0)
        assert np.all(fmap.values == 0.0)

    def test_single_fixation_peak(self):
        fmap = gz.render_heatmap([Fixation(32, 32, 0, 200)], 64, 64, sigma_px=5.0)
        assert fmap.values[32, 32] == 1.0
        assert np.unravel_index(fmap.values.argmax(), fmap.values.shape) == (32, 32)

    def test_two_distant_fixations_both_peak(self):
        sigma = 4.0
        fixes = [Fixation(10, 32, 0, 200), Fixation(10 + 6 * sigma, 32, 300, 500)]
        fmap = gz.render_heatmap(fixes, 64, 64, sigma_px=sigma)
        # direct double-Gaussian evaluation at both centers: equal by symmetry,
        # so each normalizes to 1 up to the cross-term e^{-18}
        raws = [
            sum(
                200.0 * np.exp(-((cx - f.cx_px) ** 2 + (32 - f.cy_px) ** 2) / (2 * sigma**2))
                for f in fixes
            )
            for cx in (10, 34)
        ]
        assert np.isclose(raws[0], raws[1])
        for cx in (10, 34):
            assert abs(fmap.values[32, cx] - 1.0) < 1e-6

    def test_values_match_direct_evaluation(self):
        rng = np.random.default_rng(11)
        fixes = [
            Fixation(float(rng.uniform(0, 64)), float(rng.uniform(0, 64)),
                     float(i * 400), float(i * 400 + rng.uniform(100, 300)))
            for i in range(5)
        ]
        sigma = 6.0
        fmap = gz.render_heatmap(fixes, 64, 64, sigma_px=sigma)
        raw_at = lambda x, y: sum(
            f.duration_ms * np.exp(-((x - f.cx_px) ** 2 + (y - f.cy_px) ** 2) / (2 * sigma**2))
            for f in fixes
        )
        raw_max = max(raw_at(x, y) for y in range(64) for x in range(64))
        for _ in range(100):
            x, y = int(rng.integers(64)), int(rng.integers(64))
            expected = raw_at(x, y) / raw_max
            assert abs(fmap.values[y, x] - expected) <= 1e-9 * max(1.0, abs(expected))

    def test_bad_dimensions_error(self):
        with pytest.raises(ValueError):
            gz.render_heatmap([], 0, 10, sigma_px=5.0)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_map_invariants(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(0, 6))
        fixes = [
            Fixation(float(rng.uniform(-10, 74)), float(rng.uniform(-10, 74)),
                     float(i * 500), float(i * 500 + rng.uniform(50, 400)))
            for i in range(n)
        ]
        fmap = gz.render_heatmap(fixes, 32, 32, sigma_px=float(rng.uniform(2, 20)))
        assert fmap.values.min() >= 0.0 and fmap.values.max() <= 1.0
        if fixes:
            assert fmap.values.max() == 1.0
        else:
            assert np.all(fmap.values == 0.0)

    def test_binarize(self):
        fmap = gz.render_heatmap([Fixation(16, 16, 0, 100)], 32, 32, sigma_px=4.0)
        hard = gz.binarize(fmap, 0.5)
        assert set(np.unique(hard.values)) <= {0.0, 1.0}
        assert hard.values[16, 16] == 1.0


class TestFileFormats:
    def test_gaze_csv_round_trip(self, tmp_path):
        path = str(tmp_path / "gaze.csv")
        stream = [
            GazeSample(0.0, 1.5, 2.5, 3.25, True),
            GazeSample(10.0, -4.0, 7.0, None, False),
        ]
        gz.write_gaze_csv(path, stream)
        assert gz.read_gaze_csv(path) == stream

    def test_gaze_csv_decreasing_time_cites_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t_ms,x_px,y_px,pupil_mm,valid\n10.0,1,1,,1\n5.0,1,1,,1\n")
        with pytest.raises(ValueError, match=":3:"):
            gz.read_gaze_csv(str(path))

    def test_fixation_csv_round_trip(self, tmp_path):
        path = str(tmp_path / "fix.csv")
        fixes = [Fixation(10.5, 20.25, 0.0, 150.0), Fixation(100.0, 50.0, 200.0, 400.0)]
        gz.write_fixation_csv(path, fixes)
        assert gz.read_fixation_csv(path) == fixes

    def test_pgm_round_trip_quantized(self, tmp_path):
        path = str(tmp_path / "map.pgm")
        rng = np.random.default_rng(1)
        values = rng.uniform(0, 1, size=(8, 12))
        gz.write_pgm(path, values)
        back = gz.read_pgm(path)
        assert back.shape == (8, 12)
        assert np.max(np.abs(back - values)) <= 0.5 / 255 + 1e-12

    def test_float_map_exact_round_trip(self, tmp_path):
        path = str(tmp_path / "map.gfm")
        rng = np.random.default_rng(2)
        values = rng.uniform(0, 1, size=(6, 7))
        gz.write_float_map(path, values)
        assert np.array_equal(gz.read_float_map(path), values)
