"""Command-line entry point.

Exit codes: 0 success, 1 bad configuration or arguments, 2 unreadable or
invalid data, 3 training failure. Diagnostics go to stderr; stdout carries
tables only.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

from . import __version__, data, snapshot
from .controller import TrainingConfig
from .errors import ConfigError, DataError, FearNetError, InputError, StateError, TrainingError
from .evaluation import memory_report
from .sweeps import (
    OMEGA_COLUMNS,
    mean_rows,
    multimodal_run,
    prepare,
    run_benchmark,
    sweep_base_knowledge,
    sweep_sleep_frequency,
    write_csv,
)

log = logging.getLogger("fearnet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3
MANIFEST = "manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    parser = _Parser(prog="fearnet", description="Class-incremental learning with dual memory.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(p):
        p.add_argument("--config", help="key = value config file (every field required)")
        p.add_argument("--manifest", help="rerun exactly from a previous run's manifest.json")
        p.add_argument("--data", required=False, help="training set (.csv or .dset)")
        p.add_argument("--test", help="test set; default is a stratified 80/20 split of --data")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--covariance", choices=("full", "diag"))
        p.add_argument("--sleep-frequency", type=int)

    train = sub.add_parser("train", help="run one incremental benchmark")
    run_flags(train)
    train.add_argument("--snapshot-name", default="model.dmem")

    sweep = sub.add_parser("sweep", help="sweep sleep frequency, base size, or modality mix")
    sweep.add_argument("kind", choices=("sleep", "base", "multimodal"))
    run_flags(sweep)
    sweep.add_argument("--freqs", type=_int_list, default=[1, 5, 10, 15])
    sweep.add_argument("--sizes", type=_int_list)
    sweep.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default: the config seed)")
    sweep.add_argument("--data-b", help="second modality training set (multimodal)")
    sweep.add_argument("--test-b", help="second modality test set (multimodal)")
    sweep.add_argument("--workers", type=int, default=1)

    report = sub.add_parser("report", help="memory accounting of a saved model")
    report.add_argument("snapshot")
    report.add_argument("--out", help="directory for memory_report.csv (default: beside the snapshot)")

    gen = sub.add_parser("gen", help="write a synthetic Gaussian dataset in both formats")
    gen.add_argument("--classes", type=int, default=10)
    gen.add_argument("--dim", type=int, default=20)
    gen.add_argument("--samples", type=int, default=250, help="samples per class before the 80/20 split")
    gen.add_argument("--separation", type=float, default=10.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    convert = sub.add_parser("convert", help="convert a dataset between CSV and binary")
    convert.add_argument("src")
    convert.add_argument("dst")
    return parser


def _version_string():
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    described = out.stdout.strip()
    return f"{__version__}+{described}" if out.returncode == 0 and described else __version__


def _describe_file(path, ds):
    return {
        "path": str(Path(path).resolve()),
        "sha256": data.file_checksum(path),
        "samples": len(ds),
        "dim": ds.dim,
        "classes": ds.class_count,
    }


def _resolve(args):
    """Config, datasets and manifest fields for a run, from flags or a manifest."""
    if args.manifest:
        try:
            manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read manifest: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest is not valid JSON: {exc}") from None
        config = TrainingConfig.parse(manifest["config"])
        files = manifest["data"]
        for role, info in files.items():
            if info and data.file_checksum(info["path"]) != info["sha256"]:
                raise DataError(f"{role} data {info['path']} changed since the manifest was written")
        for key in ("freqs", "sizes", "seeds"):
            if key in manifest.get("sweep", {}):
                setattr(args, key, manifest["sweep"][key])
        paths = {role: (info["path"] if info else None) for role, info in files.items()}
    else:
        if not args.config:
            raise ConfigError("--config is required (or rerun with --manifest)")
        if not args.data:
            raise ConfigError("--data is required (or rerun with --manifest)")
        config = TrainingConfig.from_file(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.covariance:
            overrides["covariance_mode"] = args.covariance
        if args.sleep_frequency is not None:
            overrides["sleep_frequency"] = args.sleep_frequency
        config = config.replace(**overrides) if overrides else config
        paths = {"train": args.data, "test": args.test}
        if getattr(args, "data_b", None):
            paths.update({"train_b": args.data_b, "test_b": args.test_b})
    return config, paths


def _load_pair(train_path, test_path, seed):
    train = data.load(train_path)
    if test_path:
        test = data.load(test_path)
    else:
        train, test = data.train_test_split(train, 0.2, seed)
    if train.dim != test.dim or train.class_count != test.class_count:
        raise DataError("training and test sets disagree on width or class count")
    return train, test


def _manifest(command, config, paths, extra):
    files = {}
    for role, path in paths.items():
        files[role] = _describe_file(path, data.load(path)) if path else None
    return {
        "command": command,
        "version": _version_string(),
        "config": config.to_text(),
        "seed": config.seed,
        "data": files,
        **extra,
    }


def _write_manifest(out, manifest):
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _print_table(rows, columns):
    widths = [max(len(c), *(len(_fmt(r[c])) for r in rows)) for c in columns]
    print("  ".join(c.rjust(w) for c, w in zip(columns, widths)))
    for row in rows:
        print("  ".join(_fmt(row[c]).rjust(w) for c, w in zip(columns, widths)))


def _fmt(value):
    return f"{value:.4f}" if isinstance(value, float) else str(value)


def cmd_train(args):
    config, paths = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = _load_pair(paths["train"], paths.get("test"), config.seed)
    train, test = prepare(train, test, config.normalize)
    t0 = time.perf_counter()
    bench = run_benchmark(train, test, config)
    elapsed = time.perf_counter() - t0
    run = bench.run

    write_csv(
        out / "metrics_per_session.csv",
        [dict(zip(("session", "alpha_base", "alpha_new", "alpha_all"), r)) for r in run.ledger.rows()],
    )
    write_csv(
        out / "oracle_metrics_per_session.csv",
        [dict(zip(("session", "alpha_base", "alpha_new", "alpha_all"), r)) for r in run.oracle_ledger.rows()],
    )
    omega_rows = [
        {"routing": "gate", "alpha_offline": bench.alpha_offline, **bench.omega._asdict()},
        {"routing": "oracle", "alpha_offline": bench.alpha_offline, **bench.oracle_omega._asdict()},
    ]
    write_csv(out / "omega_summary.csv", [
        {"routing": r["routing"], "alpha_offline": r["alpha_offline"], "omega_base": r["base"],
         "omega_new": r["new"], "omega_all": r["all"]}
        for r in omega_rows
    ])
    report = memory_report(run.system)
    write_csv(out / "memory_report.csv", [{"component": c, "bytes": b} for c, b in report.rows()])
    write_csv(out / "consolidations.csv", [
        {"sleep": i, "new_classes": " ".join(map(str, r.new_classes)), "hc_size": r.hc_size,
         "pseudo_per_class": r.pseudo_per_class, "mixture_size": r.mixture_size, "final_loss": r.final_loss[0]}
        for i, r in enumerate(run.reports, start=1)
    ], ["sleep", "new_classes", "hc_size", "pseudo_per_class", "mixture_size", "final_loss"])
    snapshot.save(run.system, out / args.snapshot_name)
    _write_manifest(out, _manifest("train", config, paths, {
        "class_order": bench.schedule.class_order,
        "timings": {**run.timings, "total": elapsed},
    }))
    _print_table(
        [{"routing": r["routing"], "omega_base": r["base"], "omega_new": r["new"], "omega_all": r["all"]}
         for r in omega_rows],
        ["routing", "omega_base", "omega_new", "omega_all"],
    )
    return EXIT_OK


def cmd_sweep(args):
    config, paths = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    t0 = time.perf_counter()
    sweep_meta = {}
    if args.kind == "multimodal":
        if not paths.get("train_b"):
            raise ConfigError("multimodal sweep needs --data-b")
        first = _load_pair(paths["train"], paths.get("test"), config.seed)
        second = _load_pair(paths["train_b"], paths.get("test_b"), config.seed)
        rows = multimodal_run(first, second, config)
        columns = ["mode", "base_classes", *OMEGA_COLUMNS]
        table = rows
    else:
        train, test = prepare(*_load_pair(paths["train"], paths.get("test"), config.seed), config.normalize)
        seeds = args.seeds or [config.seed]
        sweep_meta["seeds"] = seeds
        if args.kind == "sleep":
            key, values = "sleep_frequency", args.freqs
            if not values or min(values) < 1:
                raise ConfigError("--freqs must be positive integers")
            rows = sweep_sleep_frequency(train, test, config, values, seeds, args.workers)
            sweep_meta["freqs"] = values
        else:
            key, values = "base_classes", args.sizes
            if not values:
                raise ConfigError("--sizes is required for a base sweep")
            bad = [s for s in values if not 1 <= s < train.class_count]
            if bad:
                raise ConfigError(f"base size {bad[0]} must lie in [1, {train.class_count - 1}]")
            rows = sweep_base_knowledge(train, test, config, values, seeds, args.workers)
            sweep_meta["sizes"] = values
        columns = [key, "seed", *OMEGA_COLUMNS]
        table = mean_rows(rows, key)
    write_csv(out / f"sweep_{args.kind}.csv", rows, columns)
    _write_manifest(out, _manifest(f"sweep {args.kind}", config, paths, {
        "sweep": sweep_meta,
        "timings": {"total": time.perf_counter() - t0},
    }))
    first_col = columns[0]
    _print_table(table, [first_col, "omega_base", "omega_new", "omega_all"])
    return EXIT_OK


def cmd_report(args):
    system = snapshot.load(args.snapshot)
    report = memory_report(system)
    out = Path(args.out) if args.out else Path(args.snapshot).resolve().parent
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "memory_report.csv", [{"component": c, "bytes": b} for c, b in report.rows()])
    _print_table([{"component": c, "bytes": b} for c, b in report.rows()], ["component", "bytes"])
    print(f"total {report.megabytes():.3f} MB")
    return EXIT_OK


def cmd_gen(args):
    try:
        train, test = data.synthetic_gaussians(args.classes, args.dim, args.samples, args.separation, args.seed)
    except InputError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for role, ds in (("train", train), ("test", test)):
        for suffix in (".csv", ".dset"):
            path = out / f"{role}{suffix}"
            data.save(ds, path)
            files[path.name] = data.file_checksum(path)
    manifest = {
        "command": "gen",
        "version": _version_string(),
        "classes": args.classes,
        "dim": args.dim,
        "samples_per_class": args.samples,
        "separation": args.separation,
        "seed": args.seed,
        "train_samples": len(train),
        "test_samples": len(test),
        "files": files,
    }
    _write_manifest(out, manifest)
    return EXIT_OK


def cmd_convert(args):
    data.convert(args.src, args.dst)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "report": cmd_report, "gen": cmd_gen, "convert": cmd_convert}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits on --help and on bad arguments; report its code instead
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, StateError) as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except FearNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
