"""Unit maps, residual histograms, and the timing harness."""

import math

import numpy as np
import pytest

from idnsr.analysis import (
    HISTOGRAM_BINS,
    ImageTiming,
    UnitMap,
    bench,
    environment_descriptor,
    feature_map_summary,
    residual_histogram,
    save_metric_figure,
    save_residual_figure,
    save_timing_figure,
    save_unit_maps,
    save_histogram_table,
    write_timing_report,
)
from idnsr.errors import ShapeError, UsageError
from idnsr.imaging import ImagePlane, bicubic_resize, load_png, save_png
from idnsr.model import IdnConfig, idn_forward, init_params
from idnsr.tensor import Tensor, channel_mean


def four_block_config():
    return IdnConfig(scale=2, num_dblocks=4, d3=8, d=2, s=4, groups=2,
                     feat_channels=8)


def zeroed(params):
    for _, tensor in params.named_tensors():
        tensor.data[...] = 0.0
    return params


@pytest.fixture
def lr_plane():
    rng = np.random.default_rng(50)
    return ImagePlane(rng.random((14, 17)), "Y")


class TestFeatureMaps:

    def test_four_blocks_emit_four_plus_four(self, lr_plane):
        config = four_block_config()
        params = init_params(config, seed=51)
        maps = feature_map_summary(params, config, lr_plane)
        assert [m.name for m in maps] == [
            "enh1", "enh2", "enh3", "enh4", "comp1", "comp2", "comp3", "comp4"]

    def test_maps_match_lr_dims(self, lr_plane):
        config = four_block_config()
        params = init_params(config, seed=52)
        for unit in feature_map_summary(params, config, lr_plane):
            assert unit.plane.shape == (14, 17)

    def test_maps_equal_channel_mean_of_capture(self, tiny_config, lr_plane):
        params = init_params(tiny_config, seed=53)
        maps = feature_map_summary(params, tiny_config, lr_plane)
        capture = {}
        idn_forward(Tensor(lr_plane.data[None, None]), params, tiny_config,
                    mode="infer", capture=capture)
        by_name = {m.name: m for m in maps}
        for key in ("enh1", "comp1"):
            expected = channel_mean(capture[key]).data[0, 0]
            np.testing.assert_array_equal(by_name[key].plane, expected)
            assert by_name[key].lo == expected.min()
            assert by_name[key].hi == expected.max()

    def test_zero_weights_give_constant_maps(self, tiny_config, lr_plane):
        params = zeroed(init_params(tiny_config, seed=54))
        for unit in feature_map_summary(params, tiny_config, lr_plane):
            np.testing.assert_array_equal(unit.plane,
                                          np.zeros_like(unit.plane))
            assert unit.lo == unit.hi == 0.0


class TestUnitMapFiles:

    def test_pngs_and_sidecar(self, tiny_config, lr_plane, tmp_path):
        params = init_params(tiny_config, seed=55)
        maps = feature_map_summary(params, tiny_config, lr_plane)
        paths, sidecar = save_unit_maps(maps, tmp_path / "maps")
        assert [p.name for p in paths] == ["unit_enh1.png", "unit_comp1.png"]
        assert all(p.is_file() for p in paths)
        lines = sidecar.read_text().splitlines()
        assert len(lines) == len(maps)
        for line, unit in zip(lines, maps):
            name, lo, hi = line.split("\t")
            assert name == unit.name
            assert float(lo) == pytest.approx(unit.lo, rel=1e-6)
            assert float(hi) == pytest.approx(unit.hi, rel=1e-6)

    def test_png_content_is_normalized_map(self, tiny_config, lr_plane, tmp_path):
        params = init_params(tiny_config, seed=56)
        maps = feature_map_summary(params, tiny_config, lr_plane)
        paths, _ = save_unit_maps(maps, tmp_path)
        loaded = load_png(paths[0])
        unit = maps[0]
        normalized = (unit.plane - unit.lo) / (unit.hi - unit.lo)
        np.testing.assert_allclose(loaded.data, normalized, atol=0.5 / 255 + 1e-12)

    def test_constant_map_saves_black(self, tmp_path):
        unit = UnitMap("enh1", np.full((6, 6), 3.7), 3.7, 3.7)
        paths, _ = save_unit_maps([unit], tmp_path)
        loaded = load_png(paths[0])
        np.testing.assert_array_equal(loaded.data, np.zeros((6, 6)))


class TestResidualHistogram:

    def test_zero_residual_spikes_at_zero_bin(self, tiny_config):
        rng = np.random.default_rng(57)
        lr = ImagePlane(rng.random((10, 12)), "Y")
        hr = bicubic_resize(lr, 20, 24)
        params = zeroed(init_params(tiny_config, seed=57))
        hist = residual_histogram(params, tiny_config, lr, hr)
        assert hist.gt_counts[32] == 20 * 24
        assert hist.gt_counts.sum() == 20 * 24
        assert hist.model_counts[32] == 20 * 24

    def test_counts_partition_pixels(self, tiny_config, camera_plane):
        lr = ImagePlane(camera_plane.data[:40, :48], "Y")
        hr_src = ImagePlane(camera_plane.data[100:180, 100:196], "Y")
        params = init_params(tiny_config, seed=58)
        hist = residual_histogram(params, tiny_config, lr, hr_src)
        assert hist.gt_counts.sum() == 80 * 96
        assert hist.model_counts.sum() == 80 * 96
        assert len(hist.gt_counts) == HISTOGRAM_BINS

    def test_natural_pair_mode_is_central(self, tiny_config, camera_plane):
        hr = ImagePlane(camera_plane.data[:96, :96], "Y")
        lr = bicubic_resize(hr, 48, 48)
        params = init_params(tiny_config, seed=59)
        hist = residual_histogram(params, tiny_config, lr, hr)
        assert int(np.argmax(hist.gt_counts)) in (31, 32)

    def test_dim_mismatch(self, tiny_config):
        lr = ImagePlane(np.random.default_rng(60).random((10, 10)), "Y")
        hr = ImagePlane(np.random.default_rng(61).random((21, 20)), "Y")
        params = init_params(tiny_config, seed=60)
        with pytest.raises(ShapeError):
            residual_histogram(params, tiny_config, lr, hr)

    def test_figure_and_table_files(self, tiny_config, tmp_path):
        rng = np.random.default_rng(62)
        lr = ImagePlane(rng.random((12, 12)), "Y")
        hr = ImagePlane(rng.random((24, 24)), "Y")
        params = init_params(tiny_config, seed=62)
        hist = residual_histogram(params, tiny_config, lr, hr)
        figure = save_residual_figure(hist, tmp_path / "residual.png")
        table = save_histogram_table(hist, tmp_path / "residual.tsv")
        assert figure.is_file() and figure.stat().st_size > 0
        lines = table.read_text().splitlines()
        assert lines[0] == "bin_lo\tbin_hi\tgt_count\tmodel_count"
        assert len(lines) == HISTOGRAM_BINS + 2
        assert lines[-1].startswith("#mean\t")
        total = sum(int(line.split("\t")[2]) for line in lines[1:-1])
        assert total == 24 * 24


@pytest.fixture
def bench_corpus(tmp_path):
    rng = np.random.default_rng(63)
    paths = []
    for i, shape in enumerate([(20, 24), (16, 16)]):
        path = tmp_path / f"bench{i}.png"
        save_png(path, ImagePlane(rng.random(shape), "gray"))
        paths.append(path)
    return paths


class TestBench:

    def test_report_shape(self, tiny_config, bench_corpus):
        params = init_params(tiny_config, seed=64)
        report = bench(params, tiny_config, bench_corpus, repeats=3, threads=1)
        assert len(report.images) == 2
        assert report.repeats == 3
        for img in report.images:
            assert len(img.samples) == 3
            assert img.mean == pytest.approx(sum(img.samples) / 3)
            assert all(s > 0 for s in img.samples)
        expected = sum(i.mean for i in report.images) / 2
        assert report.mean_seconds == pytest.approx(expected)
        assert "numpy" in report.environment
        assert "threads 1" in report.environment
        assert report.threads == 1

    def test_empty_input_rejected(self, tiny_config):
        params = init_params(tiny_config, seed=65)
        with pytest.raises(UsageError):
            bench(params, tiny_config, [], repeats=1)
        with pytest.raises(UsageError):
            bench(params, tiny_config, ["x.png"], repeats=0)

    def test_timing_report_file(self, tiny_config, bench_corpus, tmp_path):
        params = init_params(tiny_config, seed=66)
        report = bench(params, tiny_config, bench_corpus, repeats=2, threads=1)
        path = write_timing_report(report, tmp_path / "times.tsv")
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# python")
        assert lines[1] == "image\trun1\trun2\tmean"
        assert len(lines) == 2 + 2 + 1
        assert lines[-1].startswith("#mean\t")
        cells = lines[2].split("\t")
        assert cells[0] == "bench0.png"
        assert float(cells[3]) == pytest.approx(
            (float(cells[1]) + float(cells[2])) / 2, abs=1e-6)

    def test_figures(self, tiny_config, bench_corpus, tmp_path):
        params = init_params(tiny_config, seed=67)
        report = bench(params, tiny_config, bench_corpus, repeats=1)
        figure = save_timing_figure(report, tmp_path / "times.png")
        assert figure.is_file() and figure.stat().st_size > 0

    def test_positive_sample_invariant(self):
        with pytest.raises(UsageError):
            ImageTiming(name="x", samples=(0.0,), mean=0.0)
        with pytest.raises(UsageError):
            ImageTiming(name="x", samples=(), mean=0.0)

    def test_environment_descriptor(self):
        text = environment_descriptor(None, "f64")
        assert "threads default" in text and "dtype f64" in text


class TestMetricFigure:

    def test_writes_figure_with_inf_rows(self, tmp_path):
        rows = [("a", {"psnr": 33.0}), ("b", {"psnr": math.inf})]
        path = save_metric_figure(rows, "psnr", tmp_path / "psnr.png")
        assert path.is_file() and path.stat().st_size > 0
