"""Command-line entry point: ``lpcnn <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import gzip
import hashlib
import json
import logging
import os
import sys
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

from . import experiments as ex
from .imageops import MNIST_CENTER
from .logpolar import LogPolarConfig, from_logpolar, make_grid, to_logpolar
from .mnist_io import CANONICAL_FILES, IdxError, load_split
from .nn import ArchMismatch, CorruptFile, Divergence, TrainConfig, load_weights
from .pgm import BadFormat, read_pgm, write_pgm

log = logging.getLogger("lpcnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ENV = "LPCNN_DATA_DIR"
DEFAULT_MIRROR = "https://ossci-datasets.s3.amazonaws.com/mnist/"

# published reference figures the report compares against
REFERENCE = {"euclidean_accuracy": 0.9859, "logpolar_accuracy": 0.9773,
             "euclidean_scale_edge": 0.8, "logpolar_scale_edge": 0.6,
             "compression_factor": 0.201, "compression_accuracy": 0.938}
BANDS = {"euclidean_accuracy": 0.975, "logpolar_accuracy": 0.965, "compression_accuracy": 0.92}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class ChecksumMismatch(DataError):
    pass


class NoResults(DataError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _float_list(value):
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return [float(v) for v in str(value).replace(" ", "").split(",") if v]


def _grid_list(value):
    if isinstance(value, (list, tuple)):
        items = [tuple(v) if not isinstance(v, str) else v for v in value]
    else:
        items = [v for v in str(value).replace(" ", "").split(",") if v]
    grids = []
    for item in items:
        if isinstance(item, str):
            a, _, b = item.lower().partition("x")
            item = (int(a), int(b))
        grids.append((int(item[0]), int(item[1])))
    return grids


def _lp_args(p):
    g = p.add_argument_group("log-polar grid")
    g.add_argument("--n-theta", type=int, default=28, help="output columns (angle samples)")
    g.add_argument("--n-rho", type=int, default=28, help="output rows (ring samples)")
    g.add_argument("--r-min", type=float, default=0.5)
    g.add_argument("--r-max", type=float, default=14.0)


def _train_args(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=_positive_int, default=5)
    g.add_argument("--batch-size", type=_positive_int, default=128)
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    g.add_argument("--train-subset", type=_positive_int, default=None)
    g.add_argument("--test-subset", type=_positive_int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lpcnn", description="Log-polar pre-processing experiments for a small MNIST CNN.")
    parser.add_argument("--config", help="JSON file of flag values; explicit flags win")
    parser.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                        help="worker/BLAS threads (1 is the deterministic reference path)")
    parser.add_argument("--data-dir", default=os.environ.get(DATA_ENV, "data"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fetch", help="download and verify the four MNIST IDX files")
    p.add_argument("--mirror", default=DEFAULT_MIRROR, help="base URL holding <name>.gz files")

    p = sub.add_parser("transform", help="write the log-polar (or inverse) image as PGM")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="input PGM")
    src.add_argument("--mnist-index", type=int, help="index into the MNIST split")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--inverse", action="store_true", help="map a log-polar image back")
    p.add_argument("--width", type=int, default=28, help="inverse output width")
    p.add_argument("--height", type=int, default=28, help="inverse output height")
    p.add_argument("--output", "-o", required=True)
    _lp_args(p)

    p = sub.add_parser("train", help="train a baseline CNN (experiment A or B)")
    p.add_argument("--variant", choices=ex.VARIANTS, required=True)
    p.add_argument("--out-dir", default="runs")
    _train_args(p)
    _lp_args(p)

    p = sub.add_parser("sweep", help="rotation x scale accuracy matrix (experiment C or D)")
    p.add_argument("--weights", required=True)
    p.add_argument("--variant", choices=ex.VARIANTS, required=True)
    p.add_argument("--rotations", type=_float_list, default=list(ex.DEFAULT_ROTATIONS))
    p.add_argument("--scales", type=_float_list, default=list(ex.DEFAULT_SCALES))
    p.add_argument("--test-subset", type=_positive_int, default=None)
    p.add_argument("--out-dir", default="runs")

    p = sub.add_parser("compress-sweep", help="retrain over log-polar grid sizes")
    p.add_argument("--grids", type=_grid_list, default=list(ex.DEFAULT_COMPRESSION_GRIDS),
                   help="comma-separated THETAxRHO list, e.g. 28x28,16x10")
    p.add_argument("--out-dir", default="runs")
    _train_args(p)
    p.add_argument("--r-min", type=float, default=0.5)
    p.add_argument("--r-max", type=float, default=14.0)

    p = sub.add_parser("report", help="summarise a results directory")
    p.add_argument("--results", required=True)
    p.add_argument("--out", help="summary path (default: <results>/summary.txt)")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read --config {args.config}: {exc}")
        if not isinstance(overrides, dict):
            parser.error("--config must hold a JSON object")
        overrides = {k.replace("-", "_"): v for k, v in overrides.items()}
        # re-parse with config values as defaults so explicit flags still win
        parser = build_parser()
        top = {a.dest for a in parser._actions}
        parser.set_defaults(**{k: v for k, v in overrides.items() if k in top})
        for action in parser._subparsers._group_actions:
            for sp in action.choices.values():
                own = {a.dest for a in sp._actions}
                sp.set_defaults(**{k: v for k, v in overrides.items() if k in own})
        args = parser.parse_args(argv)
    for name, conv in (("rotations", _float_list), ("scales", _float_list), ("grids", _grid_list)):
        if hasattr(args, name):
            setattr(args, name, conv(getattr(args, name)))
    return args


def lp_config(args) -> LogPolarConfig:
    return LogPolarConfig(center=MNIST_CENTER, r_min=args.r_min, r_max=args.r_max,
                          n_theta=getattr(args, "n_theta", 28), n_rho=getattr(args, "n_rho", 28))


def train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       optimizer=args.optimizer, rng_seed=args.seed)


def _run_dir(out_dir, manifest: ex.RunManifest) -> Path:
    return Path(out_dir) / manifest.run_id


# -- commands ---------------------------------------------------------------

def cmd_fetch(args) -> int:
    data_dir = Path(args.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    for name, want in sorted(CANONICAL_FILES.items()):
        path = data_dir / name
        if not path.exists():
            url = args.mirror.rstrip("/") + "/" + name + ".gz"
            log.info("downloading %s", url)
            try:
                with urllib.request.urlopen(url, timeout=60) as resp:
                    blob = resp.read()
            except (urllib.error.URLError, OSError) as exc:
                raise DataError(f"download of {url} failed: {exc}") from exc
            if blob[:2] == b"\x1f\x8b":
                blob = gzip.decompress(blob)
            got = hashlib.sha256(blob).hexdigest()
            if got != want:
                raise ChecksumMismatch(f"{name}: downloaded file has SHA-256 {got}, expected {want}")
            path.write_bytes(blob)
        else:
            got = hashlib.sha256(path.read_bytes()).hexdigest()
            if got != want:
                raise ChecksumMismatch(f"{name}: SHA-256 {got} does not match expected {want}")
            log.info("%s present and verified", name)
    lines = [f"{CANONICAL_FILES[n]}  {n}" for n in sorted(CANONICAL_FILES)]
    (data_dir / "SHA256SUMS").write_text("\n".join(lines) + "\n")
    print(f"{len(CANONICAL_FILES)} files verified in {data_dir}")
    return EXIT_OK


def cmd_transform(args) -> int:
    cfg = lp_config(args)
    if args.mnist_index is not None:
        ds = load_split(args.data_dir, args.split)
        if not 0 <= args.mnist_index < len(ds):
            raise UsageError(f"--mnist-index must lie in [0, {len(ds)})")
        img = ds.images[args.mnist_index]
    else:
        img = read_pgm(args.input)
    if args.inverse:
        if img.shape != cfg.shape:
            raise BadFormat(f"input is {img.shape[1]}x{img.shape[0]} but the grid is "
                            f"{cfg.n_theta}x{cfg.n_rho} (theta x rho)")
        out = from_logpolar(img, cfg, args.width, args.height)
    else:
        if args.input is not None:
            # centre the grid on the supplied image
            h, w = img.shape
            cfg = LogPolarConfig(((w - 1) / 2, (h - 1) / 2), cfg.r_min, cfg.r_max,
                                 cfg.n_theta, cfg.n_rho)
        out = to_logpolar(img, make_grid(cfg))
    write_pgm(args.output, out)
    print(f"wrote {out.shape[1]}x{out.shape[0]} PGM to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = train_config(args)
    lp = lp_config(args) if args.variant == "logpolar" else None
    manifest = ex.baseline_manifest(args.variant, args.data_dir, cfg, lp,
                                    args.train_subset, args.test_subset)
    run_dir = _run_dir(args.out_dir, manifest)
    net, report = ex.run_baseline(args.variant, args.data_dir, cfg, lp, out_dir=run_dir,
                                  train_subset=args.train_subset, test_subset=args.test_subset)
    print(report.to_csv(), end="")
    print(f"test accuracy {report.final_accuracy:.4f}; artifacts in {run_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    net = load_weights(args.weights)
    variant, lp = ex.network_variant(net)
    if variant != args.variant:
        raise ArchMismatch(f"weights were trained for the {variant} variant, not {args.variant}")
    spec = ex.SweepSpec(tuple(args.rotations), tuple(args.scales), args.variant)
    _, test = ex.load_mnist(args.data_dir)
    test = test.subset(args.test_subset)
    manifest = ex.RunManifest(
        "sweep", args.seed,
        {"variant": args.variant, "rotations": list(spec.rotations), "scales": list(spec.scales),
         "weights_sha256": net.checksum(), "logpolar": lp.to_dict() if lp else None,
         "test_subset": args.test_subset, "rotation_convention": ex.ROTATION_CONVENTION},
        ex.data_checksums(args.data_dir))
    run_dir = _run_dir(args.out_dir, manifest)
    manifest.write(run_dir / "manifest.json")
    matrix = ex.run_sweep(net, spec, test, lp, threads=args.threads, manifest_id=manifest.run_id)
    ex.export_results(matrix, run_dir / f"sweep_{args.variant}.csv",
                      run_dir / f"sweep_{args.variant}.pgm")
    manifest.status = "complete"
    manifest.write(run_dir / "manifest.json")
    print(matrix.to_csv(), end="")
    print(f"{len(spec.rotations)}x{len(spec.scales)} matrix written to {run_dir}")
    return EXIT_OK


def cmd_compress_sweep(args) -> int:
    grids = list(dict.fromkeys(args.grids))
    if len(grids) != len(args.grids):
        log.warning("dropped %d duplicate grid entries", len(args.grids) - len(grids))
    cfg = train_config(args)
    base = LogPolarConfig(MNIST_CENTER, args.r_min, args.r_max)
    manifest = ex.RunManifest(
        "compression", args.seed,
        {"grids": [list(g) for g in grids], "train": dataclasses.asdict(cfg), "logpolar": base.to_dict(),
         "train_subset": args.train_subset, "test_subset": args.test_subset},
        ex.data_checksums(args.data_dir))
    run_dir = _run_dir(args.out_dir, manifest)
    manifest.write(run_dir / "manifest.json")
    results = ex.compression_sweep(grids, args.data_dir, cfg, base, out_dir=run_dir,
                                   train_subset=args.train_subset, test_subset=args.test_subset)
    ex.export_results(results, run_dir / "compression.csv")
    manifest.status = "complete"
    manifest.write(run_dir / "manifest.json")
    print(ex.compression_csv(results), end="")
    return EXIT_OK


def _collect(results: Path):
    sweeps, compression, baselines = {}, None, {}
    for path in sorted(results.rglob("*.csv")):
        text = path.read_text()
        head = text.split("\n", 1)[0]
        if head == ex.SWEEP_HEADER:
            m = ex.AccuracyMatrix.from_csv(text)
            sweeps[m.variant] = m
        elif head == ex.COMPRESSION_HEADER:
            compression = ex.parse_compression_csv(text)
    for path in sorted(results.rglob("manifest.json")):
        try:
            m = ex.RunManifest.read(path)
        except (ValueError, TypeError):
            continue
        if m.kind == "baseline" and m.status == "complete" and not m.config.get("train_subset"):
            lp = m.config.get("logpolar") or {}
            if m.config["variant"] == "euclidean" or (lp.get("n_theta"), lp.get("n_rho")) == (28, 28):
                baselines[m.config["variant"]] = m.results.get("test_accuracy")
    return sweeps, compression, baselines


def _verdict(ok) -> str:
    return "n/a" if ok is None else ("PASS" if ok else "FAIL")


def summarize(results) -> tuple[str, np.ndarray | None]:
    """Plain-text comparison of measured results against the reference figures."""
    results = Path(results)
    sweeps, compression, baselines = _collect(results)
    if not (sweeps or compression or baselines):
        raise NoResults(f"no result files under {results}")
    out = ["log-polar CNN results summary", ""]

    out.append("baseline test accuracy")
    for v in ex.VARIANTS:
        acc = baselines.get(v)
        if acc is None and v in sweeps and 0.0 in sweeps[v].rotations and 1.0 in sweeps[v].scales:
            acc = sweeps[v].cell(0.0, 1.0)
        ok = None if acc is None else acc >= BANDS[f"{v}_accuracy"]
        shown = "missing" if acc is None else f"{acc:.4f}"
        out.append(f"  {v:<10} measured {shown}  reference {REFERENCE[f'{v}_accuracy']:.4f}"
                   f"  required >= {BANDS[f'{v}_accuracy']:.3f}  {_verdict(ok)}")
    out.append("")

    out.append("scale band at rotation 0 (accuracy > 0.90)")
    for v in ex.VARIANTS:
        m = sweeps.get(v)
        if m is None or 0.0 not in m.rotations:
            out.append(f"  {v:<10} no sweep")
            continue
        edge = ex.scale_band_edge(m)
        want = REFERENCE[f"{v}_scale_edge"]
        ok = edge is not None and abs(edge - want) <= 0.1 + 1e-9
        shown = "none" if edge is None else f"{round(edge * 100)}%"
        out.append(f"  {v:<10} holds down to {shown}  reference {round(want * 100)}%"
                   f"  (+/- one 10% step)  {_verdict(ok)}")
    out.append("")

    diff = None
    if "euclidean" in sweeps and "logpolar" in sweeps:
        try:
            diff = ex.diff_map(sweeps["logpolar"], sweeps["euclidean"])
        except ex.GridMismatch as exc:
            out.append(f"difference map unavailable: {exc}")
        else:
            lp = sweeps["logpolar"]
            rots = [r for r in (30, 60, 90, -30, -60, -90) if float(r % 360) in lp.rotations]
            out.append("log-polar minus euclidean accuracy (rows: rotation, cols: scale %)")
            out.append("  rot  " + " ".join(f"{round(s * 100):>6}" for s in lp.scales))
            for i, r in enumerate(lp.rotations):
                out.append(f"  {ex.signed_rotation(r):>4g} " + " ".join(f"{d:+.3f}" for d in diff[i]))
            if rots and 1.0 in lp.scales:
                md = ex.mean_delta(lp, sweeps["euclidean"], rots)
                out.append(f"  mean delta over rotations {sorted(rots)} at 100%: {md:+.4f}"
                           f"  {_verdict(md > 0)}")
        out.append("")

    if compression:
        out.append("compression sweep (retrained per grid)")
        for r in compression:
            out.append(f"  {r.n_theta:>3}x{r.n_rho:<3} factor {r.compression_factor:.4f}"
                       f"  accuracy {r.test_accuracy:.4f}")
        near = [r for r in compression if 0.19 <= r.compression_factor <= 0.21]
        best = max(near, key=lambda r: r.test_accuracy) if near else None
        ok = None if best is None else best.test_accuracy >= BANDS["compression_accuracy"]
        shown = "no grid in [0.19, 0.21]" if best is None else (
            f"{best.n_theta}x{best.n_rho} -> {best.test_accuracy:.4f}")
        out.append(f"  factor ~0.20: {shown}  reference {REFERENCE['compression_accuracy']:.3f}"
                   f" at {REFERENCE['compression_factor']:.3f}  {_verdict(ok)}")
        out.append("")
    return "\n".join(out), diff


def cmd_report(args) -> int:
    results = Path(args.results)
    if not results.is_dir():
        raise NoResults(f"{results} is not a directory")
    text, diff = summarize(results)
    out = Path(args.out) if args.out else results / "summary.txt"
    out.write_text(text + "\n")
    if diff is not None:
        # delta -1 -> black, 0 -> mid grey, +1 -> white; rows = scales, cols = rotations
        write_pgm(out.with_name("diffmap.pgm"), ex.heatmap(diff.T, -1.0, 1.0))
    print(text)
    return EXIT_OK


COMMANDS = {"fetch": cmd_fetch, "transform": cmd_transform, "train": cmd_train,
            "sweep": cmd_sweep, "compress-sweep": cmd_compress_sweep, "report": cmd_report}


@contextlib.contextmanager
def _blas_threads(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    with threadpool_limits(limits=n):
        yield


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _blas_threads(args.threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"lpcnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Divergence as exc:
        print(f"lpcnn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, IdxError, BadFormat, ArchMismatch, CorruptFile, OSError) as exc:
        print(f"lpcnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"lpcnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
