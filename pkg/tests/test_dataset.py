import json

import numpy as np
import pytest

from gazedet import dataset as ds
from gazedet import gaze as gz
from gazedet.dataset import ClassLabel, EllipseAnnotation, SynthConfig


class TestEllipseToTarget:
    def test_circle_extent_box(self):
        e = EllipseAnnotation(50, 50, 10, 10, ClassLabel.ATELECTASIS)
        t = ds.ellipse_to_target(e, 512, 512)
        assert (t.x_min, t.y_min, t.x_max, t.y_max) == (40, 40, 60, 60)

    def test_tiny_radius_single_pixel(self):
        # enumerate the 3x3 neighborhood under the pixel-center rule:
        # only (50, 50) has its center (50.5, 50.5) within radius 0.6 of (50.5, 50.5)
        e = EllipseAnnotation(50.5, 50.5, 0.6, 0.6, ClassLabel.ATELECTASIS)
        t = ds.ellipse_to_target(e, 64, 64)
        inside = {(x, y)
                  for y in range(49, 52) for x in range(49, 52)
                  if ((x + 0.5 - 50.5) / 0.6) ** 2 + ((y + 0.5 - 50.5) / 0.6) ** 2 <= 1}
        assert inside == {(50, 50)}
        assert t.mask.sum() == 1 and t.mask[50, 50] == 1

    def test_clamped_at_origin(self):
        e = EllipseAnnotation(0, 0, 10, 10, ClassLabel.CONSOLIDATION)
        t = ds.ellipse_to_target(e, 512, 512)
        assert (t.x_min, t.y_min, t.x_max, t.y_max) == (0, 0, 10, 10)

    def test_fully_outside_errors(self):
        e = EllipseAnnotation(-50, -50, 5, 5, ClassLabel.CONSOLIDATION)
        with pytest.raises(ValueError, match="outside"):
            ds.ellipse_to_target(e, 64, 64)

    @pytest.mark.parametrize("seed", range(10))
    def test_mask_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        e = EllipseAnnotation(
            float(rng.uniform(5, 59)), float(rng.uniform(5, 59)),
            float(rng.uniform(0.5, 12)), float(rng.uniform(0.5, 12)),
            ClassLabel.PULMONARY_EDEMA,
        )
        t = ds.ellipse_to_target(e, 64, 64)
        count = sum(
            1
            for y in range(64)
            for x in range(64)
            if ((x + 0.5 - e.cx) / e.rx) ** 2 + ((y + 0.5 - e.cy) / e.ry) ** 2 <= 1
        )
        assert int(t.mask.sum()) == count


class TestLoadReading:
    def _write_reading(self, root, annotations="[]", gaze_rows=None):
        rdir = root / "readings" / "r0"
        rdir.mkdir(parents=True)
        gz.write_pgm(str(rdir / "image.pgm"), np.zeros((64, 64)))
        (rdir / "annotations.json").write_text(annotations)
        rows = gaze_rows if gaze_rows is not None else ["0.0,1,1,,1", "10.0,2,2,,1"]
        (rdir / "gaze.csv").write_text(
            "t_ms,x_px,y_px,pupil_mm,valid\n" + "\n".join(rows) + "\n"
        )
        return str(rdir)

    def test_well_formed(self, tmp_path):
        ann = json.dumps([
            {"cx": 30, "cy": 30, "rx": 5, "ry": 4, "label": "Atelectasis"}
        ])
        reading = ds.load_reading(self._write_reading(tmp_path, ann))
        assert len(reading.annotations) == 1
        assert reading.annotations[0].label is ClassLabel.ATELECTASIS
        assert len(reading.gaze) == 2

    def test_zero_annotations_is_legal(self, tmp_path):
        reading = ds.load_reading(self._write_reading(tmp_path, "[]"))
        assert reading.annotations == []

    def test_decreasing_gaze_time_cites_line(self, tmp_path):
        rdir = self._write_reading(tmp_path, "[]", ["10.0,1,1,,1", "5.0,1,1,,1"])
        with pytest.raises(ValueError, match="gaze.csv:3"):
            ds.load_reading(rdir)

    def test_unknown_label_errors(self, tmp_path):
        ann = json.dumps([{"cx": 30, "cy": 30, "rx": 5, "ry": 4, "label": "Bogus"}])
        with pytest.raises(ValueError, match=r"annotations\.json\[0\]"):
            ds.load_reading(self._write_reading(tmp_path, ann))

    def test_missing_image_errors(self, tmp_path):
        rdir = tmp_path / "readings" / "r0"
        rdir.mkdir(parents=True)
        with pytest.raises(FileNotFoundError, match="image.pgm"):
            ds.load_reading(str(rdir))

    def test_fixations_take_precedence(self, tmp_path):
        rdir = self._write_reading(tmp_path, "[]")
        gz.write_fixation_csv(rdir + "/fixations.csv", [gz.Fixation(5, 5, 0, 200)])
        reading = ds.load_reading(rdir)
        assert reading.fixations is not None and len(reading.fixations) == 1


class TestSynthGenerate:
    def test_deterministic(self):
        cfg = SynthConfig(n_readings=5, img_size=64)
        a = ds.synth_generate(cfg, 42)
        b = ds.synth_generate(cfg, 42)
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.image, rb.image)
            assert ra.gaze == rb.gaze
            assert ra.annotations == rb.annotations

    def test_zero_lesions_config(self):
        cfg = SynthConfig(n_readings=5, img_size=64, lesions_min=0, lesions_max=0)
        for r in ds.synth_generate(cfg, 0):
            assert r.annotations == []

    def test_small_image_rejected(self):
        with pytest.raises(ValueError, match="img_size"):
            SynthConfig(n_readings=1, img_size=16)

    def test_dwell_centers_near_lesions(self):
        cfg = SynthConfig(n_readings=200, img_size=64)
        readings = ds.synth_generate(cfg, 9)
        total = hit = 0
        for r in readings:
            filtered = gz.filter_gaze(r.gaze, r.width, r.height)
            fixes = gz.detect_fixations(
                filtered,
                dispersion_px=gz.scaled_default(gz.DEFAULT_DISPERSION_PX, r.width),
                min_duration_ms=gz.DEFAULT_MIN_DURATION_MS,
            )
            for a in r.annotations:
                total += 1
                if any(np.hypot(f.cx_px - a.cx, f.cy_px - a.cy) <= 3 for f in fixes):
                    hit += 1
        assert total > 0
        assert hit / total >= 0.9

    def test_round_trip(self, tmp_path):
        cfg = SynthConfig(n_readings=3, img_size=64)
        readings = ds.synth_generate(cfg, 5)
        ds.save_dataset(str(tmp_path), readings)
        back = ds.load_dataset(str(tmp_path))
        assert len(back) == 3
        for orig, loaded in zip(readings, back):
            assert loaded.id == orig.id
            assert np.max(np.abs(loaded.image - orig.image)) <= 0.5 / 255 + 1e-12
            assert loaded.gaze == orig.gaze
            assert loaded.annotations == orig.annotations


class TestSplit:
    def _readings(self, n):
        return ds.synth_generate(SynthConfig(n_readings=n, img_size=32), 1)

    def test_sizes(self):
        tr, va, te = ds.split(self._readings(10), (0.8, 0.1, 0.1), 0)
        assert (len(tr), len(va), len(te)) == (8, 1, 1)

    def test_same_seed_same_split(self):
        readings = self._readings(12)
        a = ds.split(readings, (0.5, 0.25, 0.25), 3)
        b = ds.split(readings, (0.5, 0.25, 0.25), 3)
        assert [[r.id for r in part] for part in a] == [[r.id for r in part] for part in b]

    def test_all_train(self):
        readings = self._readings(7)
        tr, va, te = ds.split(readings, (1.0, 0.0, 0.0), 0)
        assert len(tr) == 7 and not va and not te

    def test_partition_exact(self):
        readings = self._readings(11)
        tr, va, te = ds.split(readings, (0.6, 0.2, 0.2), 5)
        ids = [r.id for part in (tr, va, te) for r in part]
        assert sorted(ids) == sorted(r.id for r in readings)
        assert len(set(ids)) == len(ids)

    def test_bad_ratios(self):
        with pytest.raises(ValueError, match="sum to 1"):
            ds.split(self._readings(4), (0.5, 0.2, 0.2), 0)

    def test_empty_input(self):
        with pytest.raises(ValueError, match="empty"):
            ds.split([], (0.8, 0.1, 0.1), 0)
