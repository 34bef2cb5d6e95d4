"""Per-session accuracy ledgers, retention scores, baselines and memory accounting.

Retention scores over incremental sessions ``t = 2..T``::

    omega_base = mean_t(alpha_base[t] / alpha_offline)
    omega_new  = mean_t(alpha_new[t])
    omega_all  = mean_t(alpha_all[t] / alpha_offline)

All accuracies are mean-class accuracies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from . import nn
from ._random import substream
from .errors import InputError, TrainingError

BYTES_PER_SCALAR = 4


def mean_class_accuracy(predicted, true):
    """Average over classes present in ``true`` of the per-class hit rate."""
    predicted = np.asarray(predicted).reshape(-1)
    true = np.asarray(true).reshape(-1)
    if predicted.shape != true.shape:
        raise InputError("predictions and labels differ in length")
    if true.size == 0:
        raise InputError("cannot score an empty set")
    classes, inverse = np.unique(true, return_inverse=True)
    hits = np.bincount(inverse, weights=(predicted == true).astype(np.float64), minlength=classes.size)
    totals = np.bincount(inverse, minlength=classes.size)
    return float(np.mean(hits / totals))


def session_accuracies(predict, test, base_classes, new_class, seen_classes, needs_labels=False):
    """``(alpha_base, alpha_new, alpha_all)`` for one session.

    Predicts once over the test rows of every seen class; the three scores are
    mean-class accuracies on the base subset, the newest class and all rows.
    """
    x, y = test.select(seen_classes)
    pred = predict(x, y) if needs_labels else predict(x)
    pred = np.asarray(pred)
    base = np.isin(y, np.asarray(list(base_classes)))
    new = y == new_class
    if not base.any() or not new.any():
        raise InputError("test set lacks rows for the base classes or the newest class")
    return (
        mean_class_accuracy(pred[base], y[base]),
        mean_class_accuracy(pred[new], y[new]),
        mean_class_accuracy(pred, y),
    )


class OmegaMetrics(NamedTuple):
    base: float
    new: float
    all: float


@dataclass
class MetricsLedger:
    """Accuracies after each incremental session, in session order (t = 2..T)."""

    alpha_base: list = field(default_factory=list)
    alpha_new: list = field(default_factory=list)
    alpha_all: list = field(default_factory=list)
    alpha_offline: float | None = None

    def __len__(self):
        return len(self.alpha_all)

    def record(self, alpha_base, alpha_new, alpha_all):
        for value in (alpha_base, alpha_new, alpha_all):
            if not 0.0 <= value <= 1.0:
                raise InputError(f"accuracy {value} outside [0, 1]")
        self.alpha_base.append(float(alpha_base))
        self.alpha_new.append(float(alpha_new))
        self.alpha_all.append(float(alpha_all))

    def rows(self):
        """``(session, alpha_base, alpha_new, alpha_all)`` with sessions numbered from 2."""
        return [
            (t, b, n, a)
            for t, (b, n, a) in enumerate(zip(self.alpha_base, self.alpha_new, self.alpha_all), start=2)
        ]

    @property
    def final(self):
        if not self.alpha_all:
            raise InputError("ledger is empty")
        return OmegaMetrics(self.alpha_base[-1], self.alpha_new[-1], self.alpha_all[-1])


def omega_metrics(ledger, alpha_offline=None):
    """Retention scores of a complete ledger.

    ``alpha_offline`` defaults to the ledger's own value.
    """
    ref = ledger.alpha_offline if alpha_offline is None else alpha_offline
    if len(ledger) == 0:
        raise InputError("ledger is empty")
    if ref is None or not 0.0 < ref <= 1.0:
        raise InputError("offline accuracy must be in (0, 1]")
    n = len(ledger)
    return OmegaMetrics(
        math.fsum(a / ref for a in ledger.alpha_base) / n,
        math.fsum(ledger.alpha_new) / n,
        math.fsum(a / ref for a in ledger.alpha_all) / n,
    )


# baselines


class OfflineMLP:
    """Plain softmax MLP trained on all data at once."""

    def __init__(self, input_dim, hidden_dims, n_classes, dropout=0.25, learning_rate=2e-3,
                 batch_size=450, seed=0):
        self.spec = nn.NetworkSpec(input_dim, tuple(hidden_dims), n_classes, "elu", "identity", dropout)
        self.params = nn.xavier_init(self.spec, substream(seed, "offline.init"))
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self._rng = substream(seed, "offline.dropout")

    def fit(self, x, y, epochs):
        x = np.asarray(x, dtype=np.float32)
        y = np.asarray(y, dtype=np.int64)
        opt = nn.NAdam(nn.flatten(self.params), self.learning_rate)
        for epoch in range(epochs):
            for idx in nn.minibatches(x.shape[0], self.batch_size, self._rng):
                fp = nn.forward(self.params, self.spec, x[idx], True, self._rng)
                loss, d_logits = nn.softmax_cross_entropy(fp.logits, y[idx])
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite offline loss at epoch {epoch}")
                grads, _ = nn.backward(self.params, self.spec, fp, d_logits.astype(np.float32))
                opt.step(nn.flatten_grads(grads))
        return self

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float32))
        return np.argmax(nn.forward(self.params, self.spec, x).logits, axis=1)


def offline_baseline(train, test, config):
    """Mean-class test accuracy of an MLP given every training sample at once.

    ``config`` supplies ``hidden_dims``, ``dropout``, ``learning_rate``,
    ``batch_size``, ``offline_epochs`` and ``seed``.
    """
    model = OfflineMLP(
        train.dim, config.hidden_dims, train.class_count, config.dropout,
        config.learning_rate, config.batch_size, config.seed,
    ).fit(train.features, train.labels, config.offline_epochs)
    return mean_class_accuracy(model.predict(test.features), test.labels)


def nearest_neighbor_predict(memory_x, memory_y, queries):
    """Label of the nearest stored point; exact ties go to the earliest stored row."""
    d = cdist(np.atleast_2d(np.asarray(queries, dtype=np.float64)), np.asarray(memory_x, dtype=np.float64))
    return np.asarray(memory_y)[np.argmin(d, axis=1)]


def nearest_neighbor_baseline(schedule, test):
    """1-NN over everything seen so far, scored after each incremental session."""
    ledger = MetricsLedger()
    xs, ys = [schedule.base[0]], [schedule.base[1]]
    seen = list(schedule.base_classes)
    for cls, (x, y) in zip(schedule.session_classes, schedule.sessions):
        xs.append(x)
        ys.append(y)
        seen.append(cls)
        mem_x, mem_y = np.concatenate(xs), np.concatenate(ys)
        ledger.record(
            *session_accuracies(
                lambda q: nearest_neighbor_predict(mem_x, mem_y, q), test, schedule.base_classes, cls, seen
            )
        )
    return ledger


def oracle_routing_eval(system, test):
    """Mean-class accuracy over the system's known classes with routing by true class residence."""
    x, y = test.select(system.known_classes)
    return mean_class_accuracy(system.predict_oracle(x, y), y)


# memory accounting


@dataclass(frozen=True)
class MemoryReport:
    parameters: int
    statistics: int
    exemplars: int

    @property
    def total(self):
        return self.parameters + self.statistics + self.exemplars

    def megabytes(self):
        """Decimal megabytes of the total."""
        return self.total / 1e6

    def rows(self):
        return [
            ("parameters", self.parameters),
            ("statistics", self.statistics),
            ("exemplars", self.exemplars),
            ("total", self.total),
        ]


def memory_report(system):
    """Bytes of every persistent scalar held by a trained system."""
    params = system.mpfc.parameter_count() + system.gate.parameter_count()
    return MemoryReport(
        BYTES_PER_SCALAR * params,
        BYTES_PER_SCALAR * system.mpfc.statistics_scalar_count(),
        system.hc.nbytes(),
    )


def _dense_params(dims):
    return sum((a + 1) * b for a, b in zip(dims[:-1], dims[1:]))


def closed_form_memory(input_dim, hidden_dims, n_classes, covariance_mode="full", exemplars=0):
    """Expected MemoryReport computed from layer sizes alone.

    Networks: encoder ``d -> h1 .. -> b``, softmax head ``b -> C``, decoder
    ``b -> b -> .. h1 -> d`` and a gate ``d -> h1 .. -> b -> 1``. Each class
    stores a mean plus either a full ``b x b`` covariance or its diagonal.
    """
    hidden = list(hidden_dims)
    b = hidden[-1]
    encoder = _dense_params([input_dim, *hidden])
    head = (b + 1) * n_classes
    decoder = _dense_params([b, b, *reversed(hidden[:-1]), input_dim])
    gate = _dense_params([input_dim, *hidden, 1])
    per_class = b + (b * b if covariance_mode == "full" else b)
    return MemoryReport(
        BYTES_PER_SCALAR * (encoder + head + decoder + gate),
        BYTES_PER_SCALAR * n_classes * per_class,
        BYTES_PER_SCALAR * exemplars * input_dim,
    )
