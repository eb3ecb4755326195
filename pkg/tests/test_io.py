import struct

import numpy as np
import pytest

from spinefuse import io
from spinefuse.core import GrayImage, LandmarkSet, PixelFrame, Rng, ValidationError
from spinefuse.evaluate import pck
from spinefuse.fusion import FusionConfig
from spinefuse.heatmap import GaussianSpec, Heatmap, render_gaussian
from spinefuse.simulate import calibrated_config, noiseless_config


class TestPgm:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = GrayImage(rng.integers(0, 256, (13, 9), dtype=np.uint8), 0.5)
        path = tmp_path / "img.pgm"
        io.write_pgm(path, img)
        back = io.read_pgm(path, 0.5)
        np.testing.assert_array_equal(back.pixels, img.pixels)
        assert back.spacing == 0.5

    def test_header_bytes(self, tmp_path):
        img = GrayImage.from_flat(2, 2, [1, 2, 3, 4], 1.0)
        path = tmp_path / "img.pgm"
        io.write_pgm(path, img)
        assert path.read_bytes() == b"P5\n2 2\n255\n" + bytes([1, 2, 3, 4])

    def test_comment_lines_skipped(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n255\n\x07\x09")
        img = io.read_pgm(path)
        np.testing.assert_array_equal(img.pixels, [[7, 9]])

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P6\n1 1\n255\nxxx")
        with pytest.raises(ValidationError, match="P5"):
            io.read_pgm(path)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ValidationError, match="maxval"):
            io.read_pgm(path)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
        with pytest.raises(ValidationError, match="raster"):
            io.read_pgm(path)


class TestLandmarkFiles:
    def test_round_trip_exact(self, tmp_path):
        pts = np.array([[1.5, 2.25], [300.123456789012, 0.0]])
        lms = LandmarkSet(pts, PixelFrame(512, 512))
        path = tmp_path / "lms.txt"
        io.write_landmarks(path, lms)
        back = io.read_landmarks(path, PixelFrame(512, 512))
        np.testing.assert_array_equal(back.points, pts)

    def test_header_format(self, tmp_path):
        lms = LandmarkSet(np.array([[1.0, 2.0]]), PixelFrame(8, 8))
        path = tmp_path / "lms.txt"
        io.write_landmarks(path, lms)
        assert path.read_text().splitlines()[0] == "#count=1"

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "lms.txt"
        path.write_text("#count=2\n0,1.0,2.0\n")
        with pytest.raises(ValidationError, match="header says 2"):
            io.read_landmarks(path)

    def test_index_order_enforced(self, tmp_path):
        path = tmp_path / "lms.txt"
        path.write_text("#count=2\n0,1.0,2.0\n5,3.0,4.0\n")
        with pytest.raises(ValidationError, match="index 5"):
            io.read_landmarks(path)


class TestHeatmapStacks:
    def test_round_trip(self, tmp_path):
        stack = [render_gaussian(GaussianSpec((i + 3, 7), 1.5), 16, 12) for i in range(4)]
        path = tmp_path / "s.hmap"
        io.write_heatmap_stack(path, stack)
        back = io.read_heatmap_stack(path)
        assert len(back) == 4
        for orig, rec in zip(stack, back):
            np.testing.assert_allclose(rec.values, orig.values, rtol=1e-6)

    def test_little_endian_layout(self, tmp_path):
        hm = Heatmap(np.array([[0.0, 1.0], [0.25, 0.5]]))
        path = tmp_path / "s.hmap"
        io.write_heatmap_stack(path, [hm])
        raw = path.read_bytes()
        assert raw[:4] == b"HMAP"
        assert struct.unpack("<III", raw[4:16]) == (1, 2, 2)
        assert np.frombuffer(raw[16:], dtype="<f4").tolist() == [0.0, 1.0, 0.25, 0.5]

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "s.hmap"
        path.write_bytes(b"HMAP" + struct.pack("<III", 2, 8, 8) + b"\x00" * 10)
        with pytest.raises(ValidationError, match="expected"):
            io.read_heatmap_stack(path)

    def test_empty_stack_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            io.write_heatmap_stack(tmp_path / "s.hmap", [])


class TestManifests:
    def _corpus(self, tmp_path, n=2):
        records = []
        for i in range(n):
            img = tmp_path / f"im_{i}.pgm"
            lmk = tmp_path / f"im_{i}.txt"
            io.write_pgm(img, GrayImage.from_flat(4, 4, list(range(16)), 0.5))
            io.write_landmarks(lmk, LandmarkSet(np.array([[1.0, 1.0]]), PixelFrame(4, 4)))
            records.append(io.ManifestRecord(img, lmk, 0.5))
        return tuple(records)

    def test_round_trip(self, tmp_path):
        records = self._corpus(tmp_path)
        manifest = io.Manifest(records, landmark_count=1, working_size=(64, 64),
                               coord_size=(32, 32))
        path = tmp_path / "manifest.txt"
        io.write_manifest(path, manifest)
        back = io.read_manifest(path)
        assert back.landmark_count == 1
        assert back.working_size == (64, 64)
        assert back.coord_size == (32, 32)
        assert [r.image_path for r in back.records] == [r.image_path for r in records]

    def test_relative_paths_follow_manifest(self, tmp_path):
        records = self._corpus(tmp_path)
        sub = tmp_path / "nested"
        sub.mkdir()
        path = sub / "manifest.txt"
        io.write_manifest(path, io.Manifest(records, landmark_count=1))
        back = io.read_manifest(path)
        assert back.records[0].image_path.is_file()

    def test_missing_file_names_path(self, tmp_path):
        path = tmp_path / "manifest.txt"
        path.write_text("[images]\nnope.pgm, nope.txt, 0.5\n")
        with pytest.raises(FileNotFoundError, match="nope"):
            io.read_manifest(path)

    def test_bad_spacing(self, tmp_path):
        records = self._corpus(tmp_path, n=1)
        path = tmp_path / "manifest.txt"
        rel = records[0].image_path.name
        path.write_text(f"[images]\n{rel}, {records[0].landmarks_path.name}, -1\n")
        with pytest.raises(ValidationError, match="spacing"):
            io.read_manifest(path)


class TestReports:
    def _report(self):
        rng = np.random.default_rng(5)
        frame = PixelFrame(64, 64)
        gts = [LandmarkSet(rng.uniform(10, 50, (5, 2)), frame) for _ in range(4)]
        preds = [LandmarkSet(g.points + rng.normal(0, 4, (5, 2)), frame) for g in gts]
        return pck(preds, gts, 8.0, 0.5)

    def test_eval_report_round_trip(self, tmp_path):
        report = self._report()
        path = tmp_path / "report.txt"
        io.write_report(path, report)
        back = io.read_report(path)
        assert back.total == report.total and back.hits == report.hits
        assert back.threshold_mm == report.threshold_mm
        for a, b in zip(back.per_landmark, report.per_landmark):
            assert a.index == b.index and a.hits == b.hits
            assert a.mean_error_mm == pytest.approx(b.mean_error_mm, abs=1e-6)

    def test_comparison_round_trip(self, tmp_path):
        from spinefuse.simulate import run_trial
        report = run_trial(Rng(3), noiseless_config(images=2))
        path = tmp_path / "cmp.txt"
        io.write_comparison(path, report)
        back = io.read_comparison(path)
        assert set(back.methods) == set(report.methods)
        for name in report.methods:
            assert back.methods[name].hits == report.methods[name].hits
        text = io.format_comparison(report)
        assert "[deltas]" in text


class TestSimConfig:
    def test_round_trip(self, tmp_path):
        config = calibrated_config(images=123)
        path = tmp_path / "sim.txt"
        io.write_sim_config(path, config)
        back = io.read_sim_config(path)
        assert back == config

    def test_per_landmark_sigmas_round_trip(self, tmp_path):
        config = noiseless_config(images=2)
        config = type(config)(
            phantom=config.phantom, coords=config.coords, heatmaps=config.heatmaps,
            fusion=FusionConfig(prior_sigma=tuple(float(3 + k) for k in range(11))),
            threshold_mm=config.threshold_mm, images=config.images,
        )
        path = tmp_path / "sim.txt"
        io.write_sim_config(path, config)
        assert io.read_sim_config(path).fusion.prior_sigma == config.fusion.prior_sigma

    def test_missing_section(self, tmp_path):
        path = tmp_path / "sim.txt"
        path.write_text("[phantom]\nlandmarks = 11\n")
        with pytest.raises(ValidationError, match="missing"):
            io.read_sim_config(path)


class TestAtomicWrite:
    def test_no_temp_residue(self, tmp_path):
        path = tmp_path / "out.bin"
        io.atomic_write(path, b"payload")
        assert path.read_bytes() == b"payload"
        assert list(tmp_path.iterdir()) == [path]
