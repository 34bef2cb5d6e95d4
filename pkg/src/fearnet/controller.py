"""The dual-memory learner: study sessions, sleep, gated prediction.

Typical use::

    config = TrainingConfig(sleep_frequency=2, hidden_dims=(64, 32))
    result = run_incremental(schedule, config, test=test_set)
    result.system.predict(x)
"""

from __future__ import annotations

import copy
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._random import substream
from .bla import BLA, combined_predict, train_gate
from .errors import ConfigError, FearNetError, InputError, StateError
from .evaluation import MetricsLedger, session_accuracies
from .hc import ExemplarStore
from .mpfc import MPFC

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    """Every knob of a run. Field names double as config-file keys."""

    sleep_frequency: int = 10
    base_epochs: int = 1000
    consolidation_epochs: int = 60
    bla_epochs: int = 20
    offline_epochs: int = 1000
    learning_rate: float = 2e-3
    decoder_lr_multiplier: float = 0.01
    batch_size: int = 450
    dropout: float = 0.25
    hidden_dims: tuple = (140, 130)
    recon_weights: tuple = (1e4, 1.0, 0.1)
    covariance_mode: str = "full"
    stats_refresh: str = "reencode"
    hc_epsilon: float = 1e-3
    base_classes: int = 0
    normalize: bool = True
    pseudorehearsal: bool = True
    gate_reinit: bool = True
    force_final_sleep: bool = False
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        self.recon_weights = tuple(float(w) for w in self.recon_weights)
        if self.covariance_mode == "diag":
            self.covariance_mode = "diagonal"
        for name in ("sleep_frequency", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        for name in ("base_epochs", "consolidation_epochs", "bla_epochs", "offline_epochs", "base_classes"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ConfigError("hidden_dims must be a non-empty list of positive widths")
        if len(self.recon_weights) != len(self.hidden_dims) + 1:
            raise ConfigError("recon_weights needs one entry for the input plus one per hidden layer")
        if not 0 < self.decoder_lr_multiplier <= 1:
            raise ConfigError("decoder_lr_multiplier must be in (0, 1]")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.covariance_mode not in ("full", "diagonal"):
            raise ConfigError("covariance_mode must be 'full' or 'diagonal'")
        if self.stats_refresh not in ("reencode", "keep"):
            raise ConfigError("stats_refresh must be 'reencode' or 'keep'")
        if not self.hc_epsilon > 0:
            raise ConfigError("hc_epsilon must be positive")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, values):
        unknown = sorted(set(values) - set(cls.field_names()))
        if unknown:
            raise ConfigError(f"unknown config key: {unknown[0]}")
        return cls(**values)

    @classmethod
    def parse(cls, text, require_all=True):
        """Parse ``key = value`` lines. ``#`` starts a comment."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"unknown config key: {key}")
            values[key] = _coerce(key, value, types[key])
        if require_all:
            missing = [k for k in cls.field_names() if k not in values]
            if missing:
                raise ConfigError(f"missing config key: {missing[0]}")
        return cls(**values)

    @classmethod
    def from_file(cls, path, require_all=True):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        return cls.parse(text, require_all)

    def to_text(self):
        lines = []
        for key, value in self.as_dict().items():
            if isinstance(value, (tuple, list)):
                value = ", ".join(repr(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(key, value, kind):
    try:
        if kind == "bool":
            lowered = value.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return lowered in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "tuple":
            items = [v for v in value.strip("[]() ").split(",") if v.strip()]
            return tuple(float(v) if key == "recon_weights" else int(v) for v in items)
        return value
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


class FearNet:
    """Recent store, long-term network and gate wired together.

    Sessions after the base are counted from one; every ``sleep_frequency``-th
    session ends with a sleep (consolidation then clearing the recent store),
    the others retrain the gate.
    """

    def __init__(self, input_dim, config=None):
        self.config = config or TrainingConfig()
        cfg = self.config
        self.input_dim = int(input_dim)
        self.mpfc = MPFC(
            self.input_dim,
            cfg.hidden_dims,
            cfg.recon_weights,
            dropout=cfg.dropout,
            learning_rate=cfg.learning_rate,
            decoder_lr_multiplier=cfg.decoder_lr_multiplier,
            batch_size=cfg.batch_size,
            covariance_mode=cfg.covariance_mode,
            stats_refresh=cfg.stats_refresh,
            seed=cfg.seed,
        )
        self.hc = ExemplarStore(cfg.hc_epsilon)
        self.gate = BLA(
            self.input_dim,
            cfg.hidden_dims,
            dropout=cfg.dropout,
            learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size,
            seed=cfg.seed,
        )
        self.gate_active = False
        self.sessions_done = 0
        self.reports = []
        self._sampling = substream(cfg.seed, "sampling")

    @property
    def known_classes(self):
        """Classes answerable from either memory."""
        return sorted(set(self.mpfc.classes) | set(self.hc.classes))

    def fit_base(self, x, y):
        self.mpfc.train_base(x, y, self.config.base_epochs)
        self.mpfc.update_class_statistics(x, y)

    def study(self, x, y):
        """Learn one study session. Returns the consolidation report if the session slept."""
        if self.mpfc.head is None:
            raise StateError("train the base knowledge before incremental sessions")
        x = np.asarray(x, dtype=np.float32)
        y = np.asarray(y).reshape(-1)
        if x.ndim != 2 or x.shape[1] != self.input_dim or x.shape[0] != y.shape[0]:
            raise InputError("session features and labels do not match the model")
        self.hc.store_batch(x, y)
        self.sessions_done += 1
        if self.sessions_done % self.config.sleep_frequency == 0:
            return self.sleep()
        self.update_gate()
        return None

    def update_gate(self):
        used = train_gate(
            self.gate, self.hc, self.mpfc, self._sampling, self.config.bla_epochs, self.config.gate_reinit
        )
        self.gate_active = used is not None and self.gate.trained

    def sleep(self):
        """Consolidate the recent store into long-term memory and empty it."""
        if self.hc.is_empty():
            log.warning("sleep requested with an empty recent store; nothing to do")
            return None
        hx, hy = self.hc.data()
        report = self.mpfc.consolidate(
            hx, hy, self.config.consolidation_epochs, self._sampling, self.config.pseudorehearsal
        )
        self.hc.clear()
        self.gate_active = False
        self.reports.append(report)
        log.info(
            "slept: %d new classes, %d recent + %d pseudo-examples",
            len(report.new_classes), report.hc_size, report.mixture_size - report.hc_size,
        )
        return report

    def predict(self, x):
        if self.mpfc.head is None:
            raise StateError("model has not been trained")
        x = np.atleast_2d(np.asarray(x, dtype=np.float32))
        if self.hc.is_empty():
            return self.mpfc.predict(x)
        return combined_predict(x, self.hc, self.mpfc, self.gate if self.gate_active else None)

    def predict_oracle(self, x, y):
        """Route each query by where its true class actually lives."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float32))
        y = np.asarray(y).reshape(-1)
        out = np.empty(y.shape[0], dtype=np.int64)
        recent = np.isin(y, self.hc.classes) if not self.hc.is_empty() else np.zeros(y.shape[0], bool)
        if recent.any():
            out[recent] = self.hc.predict(x[recent])
        if (~recent).any():
            out[~recent] = self.mpfc.predict(x[~recent])
        return out


@dataclass
class RunResult:
    system: FearNet
    ledger: MetricsLedger
    oracle_ledger: MetricsLedger
    reports: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def train_base(schedule, config):
    """A system trained on the schedule's base session only."""
    base_x, base_y = schedule.base
    if base_y.size == 0:
        raise InputError("schedule has an empty base session")
    system = FearNet(base_x.shape[1], config)
    try:
        system.fit_base(base_x, base_y)
    except FearNetError as exc:
        _tag(exc, 1)
        raise
    return system


def run_incremental(schedule, config, test=None, callback=None, base=None):
    """Train on a schedule, recording accuracies after every incremental session.

    ``test`` is a LabeledDataset; without it the ledgers stay empty.
    ``callback(session_index, system)`` runs after each session's metrics.
    ``base`` is an optional system from :func:`train_base`; it is copied, not
    modified, so one base model can seed several runs that differ only in
    how later sessions are handled.
    """
    ledger = MetricsLedger()
    oracle = MetricsLedger()
    timings = {}
    t0 = time.perf_counter()
    if base is None:
        system = train_base(schedule, config)
    else:
        if base.sessions_done:
            raise StateError("base system has already studied incremental sessions")
        system = copy.deepcopy(base)
        system.config = config
    timings["base"] = time.perf_counter() - t0
    seen = list(schedule.base_classes)
    t0 = time.perf_counter()
    for t, (cls, (x, y)) in enumerate(zip(schedule.session_classes, schedule.sessions), start=2):
        try:
            system.study(x, y)
            if config.force_final_sleep and t == len(schedule) and not system.hc.is_empty():
                system.sleep()
        except FearNetError as exc:
            _tag(exc, t)
            raise
        seen.append(cls)
        if test is not None:
            ledger.record(*session_accuracies(system.predict, test, schedule.base_classes, cls, seen))
            oracle.record(
                *session_accuracies(
                    lambda xs, ys: system.predict_oracle(xs, ys), test, schedule.base_classes, cls, seen,
                    needs_labels=True,
                )
            )
        if callback is not None:
            callback(t, system)
    timings["incremental"] = time.perf_counter() - t0
    return RunResult(system, ledger, oracle, list(system.reports), timings)


def _tag(exc, session):
    exc.session = session
    if exc.args:
        exc.args = (f"session {session}: {exc.args[0]}", *exc.args[1:])
