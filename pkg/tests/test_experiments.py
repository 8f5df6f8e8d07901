import json
import threading

import numpy as np
import pytest

from lpcnn import experiments as ex
from lpcnn.experiments import (AccuracyMatrix, CompressionResult, GridMismatch, RunManifest,
                               SweepSpec, diff_map, export_results, run_baseline, run_sweep)
from lpcnn.logpolar import LogPolarConfig
from lpcnn.mnist_io import CANONICAL_FILES
from lpcnn.nn import TrainConfig, evaluate
from lpcnn.pgm import read_pgm

TINY = TrainConfig(epochs=1, batch_size=64, rng_seed=0)


def matrix(acc, rotations=(0.0, 30.0), scales=(1.0, 0.5), variant="euclidean"):
    acc = np.asarray(acc, dtype=float)
    return AccuracyMatrix(tuple(rotations), tuple(scales), variant, acc,
                          np.full(acc.shape, 10, dtype=np.int64))


@pytest.fixture(scope="module")
def tiny_runs(data_dir, tmp_path_factory):
    cache = tmp_path_factory.mktemp("cache")
    out = {}
    for variant in ex.VARIANTS:
        out[variant] = run_baseline(variant, data_dir, TINY, cache_dir=cache,
                                    train_subset=256, test_subset=100)
    return cache, out


class TestSpecsAndMatrices:
    def test_defaults(self):
        spec = SweepSpec()
        assert spec.rotations == tuple(float(r) for r in range(0, 360, 30))
        assert spec.scales == (1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4)

    @pytest.mark.parametrize("kw", [dict(rotations=()), dict(scales=()), dict(rotations=(360,)),
                                    dict(rotations=(-30,)), dict(scales=(0.0,)),
                                    dict(scales=(1.1,)), dict(variant="polar")])
    def test_spec_validation(self, kw):
        with pytest.raises(ValueError):
            SweepSpec(**kw)

    def test_diff_map(self):
        m = matrix([[0.9, 0.5], [0.4, 0.2]])
        assert not diff_map(m, m).any()
        lp = matrix([[0.9, 0.6], [0.7, 0.3]], variant="logpolar")
        np.testing.assert_allclose(diff_map(lp, m), [[0, 0.1], [0.3, 0.1]])
        with pytest.raises(GridMismatch):
            diff_map(matrix([[1, 1]], rotations=(0.0,)), matrix([[1, 1]], rotations=(90.0,)))

    def test_signed_rotation(self):
        assert [ex.signed_rotation(r) for r in (0, 90, 180, 270, 330)] == [0, 90, 180, -90, -30]

    def test_mean_delta_and_band_edge(self):
        rot = (0.0, 30.0, 330.0)
        eu = matrix([[0.98, 0.95, 0.5], [0.5, 0.4, 0.1], [0.6, 0.4, 0.1]], rot, (1.0, 0.9, 0.8))
        lp = matrix([[0.97, 0.96, 0.93], [0.7, 0.6, 0.5], [0.6, 0.6, 0.5]], rot, (1.0, 0.9, 0.8),
                    "logpolar")
        assert ex.mean_delta(lp, eu, [30, -30]) == pytest.approx(0.1)
        assert ex.scale_band_edge(eu) == 0.9
        assert ex.scale_band_edge(lp) == 0.8
        assert ex.scale_band_edge(lp, rotation=30) is None

    def test_csv_round_trip(self):
        m = matrix([[0.1234, 1.0], [0.0, 0.5]])
        text = m.to_csv()
        lines = text.splitlines()
        assert lines[0] == "rotation_deg,scale_pct,variant,accuracy,n_samples"
        assert len(lines) == 5
        assert lines[2] == "0,50,euclidean,1.0,10"
        back = AccuracyMatrix.from_csv(text)
        np.testing.assert_array_equal(back.accuracy, m.accuracy)
        assert back.rotations == m.rotations and back.scales == m.scales

    def test_export_byte_stable(self, tmp_path):
        m = matrix([[0.25, 1.0], [0.0, 0.5]])
        a = export_results(m, tmp_path / "a.csv", tmp_path / "a.pgm")
        b = export_results(m, tmp_path / "b.csv", tmp_path / "b.pgm")
        for x, y in zip(a, b):
            assert x.read_bytes() == y.read_bytes()
        img = read_pgm(tmp_path / "a.pgm")
        # rows are scales, columns rotations
        np.testing.assert_allclose(img, np.round(np.array([[0.25, 0.0], [1.0, 0.5]]) * 255) / 255)

    def test_all_ones_heatmap(self, tmp_path):
        export_results(matrix(np.ones((3, 2)), (0.0, 30.0, 60.0)), tmp_path / "m.csv", tmp_path / "m.pgm")
        raw = (tmp_path / "m.pgm").read_bytes()
        assert raw.startswith(b"P5\n3 2\n255\n") and set(raw[len(b"P5\n3 2\n255\n"):]) == {255}

    def test_compression_csv(self, tmp_path):
        rows = [CompressionResult(16, 10, 160 / 784, 0.93, 5), CompressionResult(28, 28, 1.0, 0.97, 5)]
        export_results(rows, tmp_path / "c.csv")
        text = (tmp_path / "c.csv").read_text()
        assert text.splitlines()[0] == "n_theta,n_rho,compression_factor,test_accuracy,epochs"
        assert ex.parse_compression_csv(text) == rows
        assert ex.nearest(rows, 0.2).n_theta == 16


class TestManifest:
    def test_fingerprint_ignores_outcome(self):
        m = RunManifest("baseline", 0, {"variant": "euclidean"}, {"f": "abc"})
        fp = m.fingerprint
        m.status, m.timing, m.results = "complete", {"train_s": 1.0}, {"acc": 0.9}
        assert m.fingerprint == fp
        assert m.run_id.startswith("baseline-euclidean-s0-")

    def test_fingerprint_tracks_inputs(self):
        a = RunManifest("baseline", 0, {"variant": "euclidean"}, {"f": "abc"})
        assert a.fingerprint != RunManifest("baseline", 1, a.config, a.dataset_checksums).fingerprint
        assert a.fingerprint != RunManifest("baseline", 0, a.config, {"f": "abd"}).fingerprint

    def test_read_write(self, tmp_path):
        m = RunManifest("sweep", 3, {"variant": "logpolar"}, {"f": "x"})
        back = RunManifest.read(m.write(tmp_path / "m.json"))
        assert back.fingerprint == m.fingerprint
        assert json.loads((tmp_path / "m.json").read_text())["run_id"] == m.run_id


class TestPipeline:
    def test_baseline_writes_run_files(self, tiny_runs):
        cache, runs = tiny_runs
        dirs = sorted(p.name for p in cache.iterdir())
        assert len(dirs) == 2
        for d in cache.iterdir():
            assert {p.name for p in d.iterdir()} == {"manifest.json", "weights.bin", "train_report.csv"}
            m = json.loads((d / "manifest.json").read_text())
            assert m["status"] == "complete"
            assert set(m["dataset_checksums"]) == set(CANONICAL_FILES)

    def test_rerun_reuses_cache(self, tiny_runs, data_dir):
        cache, runs = tiny_runs
        net, report = run_baseline("euclidean", data_dir, TINY, cache_dir=cache,
                                   train_subset=256, test_subset=100)
        assert net.checksum() == runs["euclidean"][0].checksum()
        assert report.to_csv() == runs["euclidean"][1].to_csv()

    def test_logpolar_network_input(self, tiny_runs):
        net = tiny_runs[1]["logpolar"][0]
        assert net.input_shape == (28, 28, 1)
        variant, cfg = ex.network_variant(net)
        assert variant == "logpolar" and cfg == LogPolarConfig()

    @pytest.mark.parametrize("variant", ex.VARIANTS)
    def test_identity_cell_equals_baseline(self, tiny_runs, mnist, variant):
        net, report = tiny_runs[1][variant]
        test = mnist[1].subset(100)
        m = run_sweep(net, SweepSpec((0,), (1.0,), variant), test)
        assert abs(m.cell(0, 1.0) - report.final_accuracy) <= 1e-9

    def test_no_retrain_and_cell_independence(self, tiny_runs, mnist):
        net = tiny_runs[1]["logpolar"][0]
        test = mnist[1].subset(60)
        before = net.checksum()
        spec = SweepSpec((0, 90, 210), (1.0, 0.6), "logpolar")
        serial = run_sweep(net, spec, test)
        parallel = run_sweep(net, spec, test, threads=3)
        reordered = run_sweep(net, SweepSpec((210, 0, 90), (0.6, 1.0), "logpolar"), test)
        assert net.checksum() == before
        np.testing.assert_array_equal(serial.accuracy, parallel.accuracy)
        for r in spec.rotations:
            for s in spec.scales:
                assert serial.cell(r, s) == reordered.cell(r, s)
        assert np.all((serial.accuracy >= 0) & (serial.accuracy <= 1))
        assert np.all(serial.n_samples == 60)

    @pytest.mark.parametrize("variant", ex.VARIANTS)
    def test_pipeline_order(self, tiny_runs, mnist, variant):
        net = tiny_runs[1][variant][0]
        test = mnist[1].subset(20)
        calls = []
        lock = threading.Lock()

        def hook(stage, r, s, n):
            with lock:
                calls.append((stage, r, s, n))

        run_sweep(net, SweepSpec((0, 30), (0.8,), variant), test, hook=hook)
        expected = ["rotate", "scale"] + (["logpolar"] if variant == "logpolar" else []) + ["classify"]
        for r in (0.0, 30.0):
            stages = [c[0] for c in calls if c[1] == r]
            assert stages == expected
        # every image goes through each transform exactly once per cell
        assert all(c[3] == 20 for c in calls)

    def test_sweep_matches_manual_pipeline(self, tiny_runs, mnist):
        from lpcnn.imageops import MNIST_CENTER, rotate, scale
        from lpcnn.logpolar import make_grid, to_logpolar
        from lpcnn.mnist_io import Dataset
        net = tiny_runs[1]["logpolar"][0]
        test = mnist[1].subset(50)
        x = scale(rotate(test.images, 60, MNIST_CENTER), 0.7, MNIST_CENTER)
        x = to_logpolar(x, make_grid(LogPolarConfig()))
        manual = evaluate(net, Dataset(x, test.labels, "test"))
        assert run_sweep(net, SweepSpec((60,), (0.7,), "logpolar"), test).cell(60, 0.7) == manual

    def test_compression_sweep_sorted(self, data_dir, tmp_path):
        res = ex.compression_sweep([(12, 10), (8, 6)], data_dir, TINY,
                                   cache_dir=tmp_path, train_subset=128, test_subset=50)
        assert [r.compression_factor for r in res] == sorted(r.compression_factor for r in res)
        assert (res[0].n_theta, res[0].n_rho) == (8, 6)
        assert res[0].compression_factor == 48 / 784
        assert all(0 <= r.test_accuracy <= 1 and r.epochs == 1 for r in res)


def test_manifest_written_before_results(data_dir, tmp_path):
    seen = []

    def progress(epoch, batch, loss):
        seen.append(sorted(p.name for p in tmp_path.iterdir()))
        status = json.loads((tmp_path / "manifest.json").read_text())["status"]
        assert status == "running"

    run_baseline("euclidean", data_dir, TINY, out_dir=tmp_path, train_subset=64, test_subset=10,
                 progress=progress)
    assert seen and all(s == ["manifest.json"] for s in seen)
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "complete"
