"""Benchmark runs and parameter sweeps with CSV output.

Each seed gets its own schedule, offline reference and base model; sweep
points for that seed share the base model and differ only afterwards. Seeds
run in separate processes when ``workers > 1``. Rows come back sorted, so the
output does not depend on scheduling.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .controller import run_incremental, train_base
from .data import concatenate, make_schedule, normalize_unit_length, zero_pad
from .errors import InputError
from .evaluation import memory_report, offline_baseline, omega_metrics

log = logging.getLogger(__name__)

OMEGA_COLUMNS = [
    "alpha_offline",
    "omega_base",
    "omega_new",
    "omega_all",
    "oracle_omega_base",
    "oracle_omega_new",
    "oracle_omega_all",
]


@dataclass
class Benchmark:
    """One finished run with its offline reference."""

    run: object
    alpha_offline: float
    schedule: object

    @property
    def omega(self):
        return omega_metrics(self.run.ledger, self.alpha_offline)

    @property
    def oracle_omega(self):
        return omega_metrics(self.run.oracle_ledger, self.alpha_offline)

    def summary(self):
        o, q = self.omega, self.oracle_omega
        return dict(zip(OMEGA_COLUMNS, (self.alpha_offline, *o, *q)))

    def memory(self):
        return memory_report(self.run.system)


def prepare(train, test, normalize=True):
    if not normalize:
        return train, test
    return normalize_unit_length(train), normalize_unit_length(test)


def base_class_count(config, dataset):
    return config.base_classes or dataset.class_count // 2


def run_benchmark(train, test, config, base_classes=None, alpha_offline=None):
    """Offline reference plus one incremental run on prepared data."""
    if alpha_offline is None:
        alpha_offline = offline_baseline(train, test, config)
    schedule = make_schedule(train, base_class_count(config, train), config.seed, base_classes)
    run = run_incremental(schedule, config, test)
    return Benchmark(run, alpha_offline, schedule)


def _sleep_worker(args):
    train, test, config, frequencies = args
    alpha_offline = offline_baseline(train, test, config)
    schedule = make_schedule(train, base_class_count(config, train), config.seed)
    base = train_base(schedule, config)
    rows = []
    for k in frequencies:
        cfg = config.replace(sleep_frequency=k)
        run = run_incremental(schedule, cfg, test, base=base)
        bench = Benchmark(run, alpha_offline, schedule)
        rows.append({"sleep_frequency": k, "seed": config.seed, **bench.summary()})
        log.info("seed %d sleep frequency %d: %s", config.seed, k, bench.omega)
    return rows


def _base_worker(args):
    train, test, config, sizes = args
    alpha_offline = offline_baseline(train, test, config)
    rows = []
    for size in sizes:
        schedule = make_schedule(train, size, config.seed)
        run = run_incremental(schedule, config, test)
        bench = Benchmark(run, alpha_offline, schedule)
        rows.append({"base_classes": size, "seed": config.seed, **bench.summary()})
        log.info("seed %d base size %d: %s", config.seed, size, bench.omega)
    return rows


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def _seeds(config, seeds):
    return [config.seed] if seeds is None else [int(s) for s in seeds]


def sweep_sleep_frequency(train, test, config, frequencies, seeds=None, workers=1):
    """One row per (frequency, seed)."""
    frequencies = [int(k) for k in frequencies]
    if not frequencies or min(frequencies) < 1:
        raise InputError("sleep frequencies must be positive integers")
    jobs = [(train, test, config.replace(seed=s), frequencies) for s in _seeds(config, seeds)]
    rows = [row for chunk in _map(_sleep_worker, jobs, workers) for row in chunk]
    return sorted(rows, key=lambda r: (r["sleep_frequency"], r["seed"]))


def sweep_base_knowledge(train, test, config, sizes, seeds=None, workers=1):
    """One row per (base size, seed). Every size must leave an incremental class."""
    sizes = [int(s) for s in sizes]
    bad = [s for s in sizes if not 1 <= s < train.class_count]
    if not sizes or bad:
        raise InputError(f"base sizes must lie in [1, {train.class_count - 1}]")
    jobs = [(train, test, config.replace(seed=s), sizes) for s in _seeds(config, seeds)]
    rows = [row for chunk in _map(_base_worker, jobs, workers) for row in chunk]
    return sorted(rows, key=lambda r: (r["base_classes"], r["seed"]))


MULTIMODAL_MODES = ("first_base", "second_base", "mixed")


def combine_modalities(first, second):
    """Zero-pad two (train, test) pairs to a common width and stack them.

    Classes of ``second`` are renumbered after those of ``first``.
    """
    width = max(first[0].dim, second[0].dim)
    pairs = [[zero_pad(ds, width) for ds in pair] for pair in (first, second)]
    return concatenate(pairs[0][0], pairs[1][0]), concatenate(pairs[0][1], pairs[1][1])


def multimodal_base(mode, first_classes, second_classes, seed=0):
    """Base class ids for one multimodal mode."""
    first = list(range(first_classes))
    second = list(range(first_classes, first_classes + second_classes))
    if mode == "first_base":
        return first
    if mode == "second_base":
        return second
    if mode == "mixed":
        rng = np.random.default_rng(seed)
        pick = lambda ids: sorted(int(c) for c in rng.permutation(ids)[: len(ids) // 2])
        return pick(first) + pick(second)
    raise InputError(f"unknown multimodal mode {mode!r}; choose from {MULTIMODAL_MODES}")


def multimodal_run(first, second, config, modes=MULTIMODAL_MODES):
    """Learn two feature sets as one class-incremental stream under each base choice.

    ``first`` and ``second`` are (train, test) pairs, unnormalized; padding
    happens before normalization.
    """
    train, test = combine_modalities(first, second)
    train, test = prepare(train, test, config.normalize)
    alpha_offline = offline_baseline(train, test, config)
    rows = []
    for mode in modes:
        base = multimodal_base(mode, first[0].class_count, second[0].class_count, config.seed)
        bench = run_benchmark(train, test, config, base, alpha_offline)
        rows.append({"mode": mode, "base_classes": len(base), **bench.summary()})
    return rows


def mean_rows(rows, key):
    """Average the numeric columns of ``rows`` grouped by ``key``, dropping ``seed``."""
    groups = {}
    for row in rows:
        groups.setdefault(row[key], []).append(row)
    out = []
    for value in sorted(groups):
        group = groups[value]
        merged = {key: value, "seeds": len(group)}
        for col in OMEGA_COLUMNS:
            merged[col] = float(np.mean([r[col] for r in group]))
        out.append(merged)
    return out


def write_csv(path, rows, columns=None):
    """Write dict rows; floats use ``repr`` so reruns compare byte for byte."""
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value
