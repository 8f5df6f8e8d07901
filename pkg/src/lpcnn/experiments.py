"""Baseline training, rotation x scale sweeps and the compression sweep.

Experiments A/B train one CNN per input variant ("euclidean" or "logpolar").
Experiments C/D reuse those weights unchanged and measure accuracy over a grid
of rotations and scales applied to the test images *before* the optional
log-polar pre-filter. The compression sweep retrains a log-polar CNN for each
output grid size.
"""
from __future__ import annotations

import copy
import dataclasses
import functools
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .imageops import MNIST_CENTER, InterpMode, rotation_sampler, scale_sampler
from .logpolar import LogPolarConfig, LogPolarTransform, compression_factor
from .mnist_io import Dataset, dataset_checksums, load_split
from .nn import (Network, TrainConfig, TrainReport, build_cnn, evaluate, load_weights,
                 save_weights, train)
from .pgm import write_pgm

log = logging.getLogger(__name__)

VARIANTS = ("euclidean", "logpolar")
DEFAULT_ROTATIONS = tuple(range(0, 360, 30))
DEFAULT_SCALES = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4)
DEFAULT_COMPRESSION_GRIDS = ((28, 28), (24, 24), (20, 20), (16, 16),
                             (16, 10), (14, 11), (12, 10), (10, 8))
ROTATION_CONVENTION = ("positive angles turn counter-clockwise in (x right, y down) pixel"
                       " axes, i.e. clockwise on screen; rotate then scale, about (13.5, 13.5)")
# bump when a change alters numeric results without touching the hashed sources
PIPELINE_VERSION = 1
_NUMERIC_SOURCES = ("imageops.py", "logpolar.py", "mnist_io.py", "experiments.py",
                    "nn/layers.py", "nn/network.py", "nn/training.py", "nn/weights.py")

SWEEP_HEADER = "rotation_deg,scale_pct,variant,accuracy,n_samples"
COMPRESSION_HEADER = "n_theta,n_rho,compression_factor,test_accuracy,epochs"


class GridMismatch(ValueError):
    pass


def code_fingerprint() -> str:
    """SHA-256 over the sources that determine numeric results."""
    root = Path(__file__).parent
    h = hashlib.sha256(f"{__version__}:{PIPELINE_VERSION}".encode())
    for rel in _NUMERIC_SOURCES:
        h.update(rel.encode())
        h.update((root / rel).read_bytes())
    return h.hexdigest()


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


@dataclass
class RunManifest:
    kind: str
    seed: int
    config: dict
    dataset_checksums: dict
    code_version: dict = field(default_factory=lambda: {
        "package": __version__, "source_sha256": code_fingerprint()})
    status: str = "running"
    timing: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        key = {"kind": self.kind, "seed": self.seed, "config": self.config,
               "dataset_checksums": self.dataset_checksums, "code_version": self.code_version}
        return hashlib.sha256(_canonical_json(key).encode()).hexdigest()

    @property
    def run_id(self) -> str:
        variant = self.config.get("variant", "")
        return f"{self.kind}-{variant}-s{self.seed}-{self.fingerprint[:10]}".replace("--", "-")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fingerprint"] = self.fingerprint
        d["run_id"] = self.run_id
        return d

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_canonical_json(self.to_dict()) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@functools.lru_cache(maxsize=4)
def _load_split_cached(data_dir: str, split: str) -> Dataset:
    return load_split(data_dir, split)


def load_mnist(data_dir) -> tuple[Dataset, Dataset]:
    data_dir = str(Path(data_dir).resolve())
    return _load_split_cached(data_dir, "train"), _load_split_cached(data_dir, "test")


@functools.lru_cache(maxsize=4)
def _checksums_cached(data_dir: str) -> tuple:
    return tuple(dataset_checksums(data_dir).items())


def data_checksums(data_dir) -> dict:
    return dict(_checksums_cached(str(Path(data_dir).resolve())))


def prepare_images(images: np.ndarray, variant: str, lp_cfg: LogPolarConfig | None = None):
    """Apply the variant's pre-filter: identity or the forward log-polar transform."""
    if variant == "euclidean":
        return images
    if variant == "logpolar":
        return LogPolarTransform(lp_cfg or LogPolarConfig(), images.shape[-2:])(images)
    raise ValueError(f"unknown variant {variant!r}")


def _input_shape(variant: str, lp_cfg: LogPolarConfig | None, src_shape=(28, 28)):
    if variant == "logpolar":
        return (*(lp_cfg or LogPolarConfig()).shape, 1)
    return (*src_shape, 1)


def baseline_manifest(variant, data_dir, train_cfg: TrainConfig, lp_cfg=None,
                      train_subset=None, test_subset=None) -> RunManifest:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    config = {"variant": variant, "train": dataclasses.asdict(train_cfg),
              "logpolar": (lp_cfg or LogPolarConfig()).to_dict() if variant == "logpolar" else None,
              "train_subset": train_subset, "test_subset": test_subset,
              "rotation_convention": ROTATION_CONVENTION}
    return RunManifest("baseline", train_cfg.rng_seed, config, data_checksums(data_dir))


def run_baseline(variant: str, data_dir, train_cfg: TrainConfig | None = None,
                 lp_cfg: LogPolarConfig | None = None, out_dir=None, cache_dir=None,
                 train_subset: int | None = None, test_subset: int | None = None,
                 progress=None) -> tuple[Network, TrainReport]:
    """Train the variant's CNN and write weights, report and manifest.

    With ``cache_dir`` the run lives in ``cache_dir/<run_id>`` and a completed
    run with the same fingerprint (config, data checksums, code) is loaded
    instead of retrained.
    """
    train_cfg = train_cfg or TrainConfig()
    if variant == "logpolar":
        lp_cfg = lp_cfg or LogPolarConfig()
    manifest = baseline_manifest(variant, data_dir, train_cfg, lp_cfg, train_subset, test_subset)
    run_dir = Path(out_dir) if out_dir is not None else (
        Path(cache_dir) / manifest.run_id if cache_dir is not None else None)

    if cache_dir is not None and run_dir is not None:
        cached = _load_completed(run_dir, manifest)
        if cached is not None:
            log.info("reusing completed run %s", run_dir)
            return cached

    if run_dir is not None:
        manifest.write(run_dir / "manifest.json")

    train_ds, test_ds = load_mnist(data_dir)
    train_ds, test_ds = train_ds.subset(train_subset), test_ds.subset(test_subset)
    t0 = time.perf_counter()
    train_x = Dataset(prepare_images(train_ds.images, variant, lp_cfg), train_ds.labels, "train")
    test_x = Dataset(prepare_images(test_ds.images, variant, lp_cfg), test_ds.labels, "test")
    t_prep = time.perf_counter() - t0

    net = build_cnn(_input_shape(variant, lp_cfg, train_ds.images.shape[1:]), train_cfg.rng_seed)
    net.meta = {"variant": variant,
                "logpolar": lp_cfg.to_dict() if variant == "logpolar" else None,
                "fingerprint": manifest.fingerprint}
    report = train(net, train_x, train_cfg, test_x, progress=progress)

    if run_dir is not None:
        save_weights(net, run_dir / "weights.bin")
        (run_dir / "train_report.csv").write_text(report.to_csv())
        manifest.status = "complete"
        manifest.timing = {"preprocess_s": round(t_prep, 3), "train_s": round(report.seconds, 3),
                           "finished_utc": datetime.now(timezone.utc).isoformat(timespec="seconds")}
        manifest.results = {"test_accuracy": report.final_accuracy,
                            "weights_sha256": net.checksum(),
                            "report": report.to_dict()["epochs"]}
        manifest.write(run_dir / "manifest.json")
    return net, report


def _load_completed(run_dir: Path, manifest: RunManifest):
    path = run_dir / "manifest.json"
    if not path.exists():
        return None
    try:
        old = RunManifest.read(path)
    except (ValueError, TypeError):
        return None
    if old.status != "complete" or old.fingerprint != manifest.fingerprint:
        return None
    net = load_weights(run_dir / "weights.bin")
    report = TrainReport.from_dict({"epochs": old.results["report"],
                                    "seconds": old.timing.get("train_s", 0.0)})
    return net, report


def network_variant(net: Network) -> tuple[str, LogPolarConfig | None]:
    variant = net.meta.get("variant", "euclidean")
    lp = net.meta.get("logpolar")
    return variant, (LogPolarConfig(**lp) if lp else None)


@dataclass(frozen=True)
class SweepSpec:
    rotations: tuple = DEFAULT_ROTATIONS
    scales: tuple = DEFAULT_SCALES
    variant: str = "euclidean"

    def __post_init__(self):
        object.__setattr__(self, "rotations", tuple(float(r) for r in self.rotations))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if not self.rotations or not self.scales:
            raise ValueError("rotations and scales must be non-empty")
        if any(not 0.0 <= r < 360.0 for r in self.rotations):
            raise ValueError("rotations must lie in [0, 360)")
        if any(not 0.0 < s <= 1.0 for s in self.scales):
            raise ValueError("scales must lie in (0, 1]")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass
class AccuracyMatrix:
    """accuracy[i, j] for rotations[i] and scales[j]."""

    rotations: tuple
    scales: tuple
    variant: str
    accuracy: np.ndarray
    n_samples: np.ndarray
    manifest_id: str = ""

    def cell(self, rotation: float, scale: float) -> float:
        i = self.rotations.index(float(rotation))
        j = self.scales.index(float(scale))
        return float(self.accuracy[i, j])

    def to_csv(self) -> str:
        lines = [SWEEP_HEADER]
        for i, r in enumerate(self.rotations):
            for j, s in enumerate(self.scales):
                lines.append(f"{r:g},{round(s * 100)},{self.variant},"
                             f"{float(self.accuracy[i, j])!r},{int(self.n_samples[i, j])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "AccuracyMatrix":
        rows = [line.split(",") for line in text.strip().splitlines()]
        if not rows or ",".join(rows[0]) != SWEEP_HEADER:
            raise ValueError("not a sweep CSV")
        rows = rows[1:]
        rotations = tuple(dict.fromkeys(float(r[0]) for r in rows))
        scales = tuple(dict.fromkeys(int(r[1]) / 100 for r in rows))
        variants = {r[2] for r in rows}
        if len(variants) != 1:
            raise ValueError(f"sweep CSV mixes variants {sorted(variants)}")
        acc = np.full((len(rotations), len(scales)), np.nan)
        n = np.zeros((len(rotations), len(scales)), dtype=np.int64)
        for r in rows:
            i, j = rotations.index(float(r[0])), scales.index(int(r[1]) / 100)
            acc[i, j] = float(r[3])
            n[i, j] = int(r[4])
        return cls(rotations, scales, variants.pop(), acc, n)


def run_sweep(net: Network, spec: SweepSpec, test: Dataset, lp_cfg: LogPolarConfig | None = None,
              center=MNIST_CENTER, threads: int = 1, hook=None,
              mode=InterpMode.BILINEAR, manifest_id: str = "") -> AccuracyMatrix:
    """Evaluate a trained network on rotated and scaled copies of ``test``.

    Each cell rotates, then scales every image in the Euclidean plane, then
    (log-polar variant only) applies the pre-filter, then classifies. The
    network is never modified. ``hook(stage, rotation, scale, n_images)`` is
    called after every stage.
    """
    if spec.variant == "logpolar":
        lp_cfg = lp_cfg or network_variant(net)[1] or LogPolarConfig()
    shape = test.images.shape[-2:]
    lp_transform = LogPolarTransform(lp_cfg, shape, mode) if spec.variant == "logpolar" else None
    cells = [(i, j) for i in range(len(spec.rotations)) for j in range(len(spec.scales))]

    def notify(stage, r, s):
        if hook is not None:
            hook(stage, r, s, len(test))

    def run_cell(model: Network, i: int, j: int) -> float:
        r, s = spec.rotations[i], spec.scales[j]
        x = rotation_sampler(shape, r, center, mode)(test.images)
        notify("rotate", r, s)
        x = scale_sampler(shape, s, center, mode)(x)
        notify("scale", r, s)
        if lp_transform is not None:
            x = lp_transform(x)
            notify("logpolar", r, s)
        acc = evaluate(model, Dataset(x, test.labels, test.split))
        notify("classify", r, s)
        return acc

    acc = np.zeros((len(spec.rotations), len(spec.scales)))
    if threads <= 1:
        for i, j in cells:
            acc[i, j] = run_cell(net, i, j)
    else:
        # each worker gets its own copy: layers keep per-call scratch state
        clones = [copy.deepcopy(net) for _ in range(threads)]
        with ThreadPoolExecutor(threads) as pool:
            futures = {(i, j): pool.submit(run_cell, clones[k % threads], i, j)
                       for k, (i, j) in enumerate(cells)}
            for (i, j), fut in futures.items():
                acc[i, j] = fut.result()
    n = np.full(acc.shape, len(test), dtype=np.int64)
    return AccuracyMatrix(spec.rotations, spec.scales, spec.variant, acc, n, manifest_id)


def diff_map(lp: AccuracyMatrix, eu: AccuracyMatrix) -> np.ndarray:
    """Cellwise log-polar minus Euclidean accuracy."""
    if tuple(lp.rotations) != tuple(eu.rotations) or tuple(lp.scales) != tuple(eu.scales):
        raise GridMismatch("accuracy matrices cover different rotation/scale grids")
    return np.asarray(lp.accuracy, dtype=np.float64) - np.asarray(eu.accuracy, dtype=np.float64)


def signed_rotation(r: float) -> float:
    """Map [0, 360) onto (-180, 180]."""
    return r - 360.0 if r > 180.0 else r


@dataclass(frozen=True)
class CompressionResult:
    n_theta: int
    n_rho: int
    compression_factor: float
    test_accuracy: float
    epochs: int


def compression_sweep(grids, data_dir, train_cfg: TrainConfig | None = None,
                      base_cfg: LogPolarConfig | None = None, cache_dir=None, out_dir=None,
                      train_subset=None, test_subset=None) -> list[CompressionResult]:
    """Retrain a log-polar CNN for every (n_theta, n_rho) grid; sorted by factor."""
    train_cfg = train_cfg or TrainConfig()
    base_cfg = base_cfg or LogPolarConfig()
    results = []
    for n_theta, n_rho in grids:
        cfg = dataclasses.replace(base_cfg, n_theta=int(n_theta), n_rho=int(n_rho))
        run_dir = Path(out_dir) / f"grid-{n_theta}x{n_rho}" if out_dir is not None else None
        _, report = run_baseline("logpolar", data_dir, train_cfg, cfg, out_dir=run_dir,
                                 cache_dir=cache_dir, train_subset=train_subset,
                                 test_subset=test_subset)
        results.append(CompressionResult(cfg.n_theta, cfg.n_rho, compression_factor(cfg, 28, 28),
                                         report.final_accuracy, train_cfg.epochs))
    return sorted(results, key=lambda r: (r.compression_factor, r.n_theta, r.n_rho))


def compression_csv(results: list[CompressionResult]) -> str:
    lines = [COMPRESSION_HEADER]
    for r in results:
        lines.append(f"{r.n_theta},{r.n_rho},{r.compression_factor!r},{r.test_accuracy!r},{r.epochs}")
    return "\n".join(lines) + "\n"


def parse_compression_csv(text: str) -> list[CompressionResult]:
    rows = [line.split(",") for line in text.strip().splitlines()]
    if not rows or ",".join(rows[0]) != COMPRESSION_HEADER:
        raise ValueError("not a compression CSV")
    return [CompressionResult(int(a), int(b), float(c), float(d), int(e)) for a, b, c, d, e in rows[1:]]


def heatmap(values: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Linear map of ``values`` from [lo, hi] onto [0, 1] intensities."""
    return np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def export_results(result, csv_path, pgm_path=None) -> list[Path]:
    """Write a sweep matrix (CSV + PGM heatmap) or compression results (CSV).

    Heatmaps put scales on rows and rotations on columns, accuracy 0 black and
    1 white.
    """
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(result, AccuracyMatrix):
        csv_path.write_text(result.to_csv())
        written.append(csv_path)
        if pgm_path is not None:
            written.append(write_pgm(pgm_path, heatmap(result.accuracy.T)))
    else:
        csv_path.write_text(compression_csv(list(result)))
        written.append(csv_path)
    return written


def scale_band_edge(matrix: AccuracyMatrix, rotation=0.0, threshold=0.90) -> float | None:
    """Smallest scale s such that every scale >= s keeps accuracy above threshold."""
    i = matrix.rotations.index(float(rotation))
    edge = None
    for s in sorted(matrix.scales, reverse=True):
        if matrix.accuracy[i, matrix.scales.index(s)] > threshold:
            edge = s
        else:
            break
    return edge


def mean_delta(lp: AccuracyMatrix, eu: AccuracyMatrix, rotations, scale=1.0) -> float:
    d = diff_map(lp, eu)
    j = lp.scales.index(float(scale))
    vals = [d[lp.rotations.index(float(r % 360)), j] for r in rotations]
    return float(np.mean(vals))


def nearest(results: list[CompressionResult], factor: float) -> CompressionResult:
    return min(results, key=lambda r: (abs(r.compression_factor - factor), r.n_theta))


__all__ = [
    "AccuracyMatrix", "CompressionResult", "GridMismatch", "RunManifest", "SweepSpec",
    "compression_sweep", "diff_map", "export_results", "load_mnist", "run_baseline",
    "run_sweep", "code_fingerprint",
]
