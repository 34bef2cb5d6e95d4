"""Gate deciding whether a query is answered from recent or long-term memory.

The gate is an MLP with the encoder's hidden layout and one logistic output.
It is trained to output 1 on recent-memory exemplars and 0 on pseudo-examples
of long-term classes, so ``A(x)`` reads as "probability the memory is recent".
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from ._random import substream
from .errors import InputError, StateError, TrainingError

log = logging.getLogger(__name__)

CLAMP = 1e-6


@dataclass
class BLA:
    input_dim: int
    hidden_dims: tuple = (140, 130)
    dropout: float = 0.25
    learning_rate: float = 2e-3
    batch_size: int = 450
    seed: int = 0
    dtype: type = np.float32
    trained: bool = field(default=False, init=False)

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        self.spec = nn.NetworkSpec(self.input_dim, self.hidden_dims, 1, "elu", "logistic", self.dropout)
        self._init_rng = substream(self.seed, "bla.init")
        self._train_rng = substream(self.seed, "bla.dropout")
        self.reset()

    def reset(self):
        self.params = nn.xavier_init(self.spec, self._init_rng, self.dtype)
        self.trained = False

    def parameter_count(self):
        return sum(layer.size for layer in self.params)

    def _loss_and_grads(self, x, targets, train_mode=False, rng=None):
        fp = nn.forward(self.params, self.spec, x, train_mode, rng)
        loss, d_logits = nn.sigmoid_cross_entropy(fp.logits, targets)
        grads, _ = nn.backward(self.params, self.spec, fp, d_logits.astype(self.dtype, copy=False))
        return loss, nn.flatten_grads(grads)

    def fit(self, recent_x, replay_x, epochs=20):
        """Train on recent exemplars (target 1) against pseudo-examples (target 0).

        Returns the final epoch's mean loss.
        """
        recent_x = np.asarray(recent_x, dtype=self.dtype)
        replay_x = np.asarray(replay_x, dtype=self.dtype)
        if recent_x.shape[0] == 0 or replay_x.shape[0] == 0:
            raise InputError("gate training needs both recent exemplars and pseudo-examples")
        x = np.concatenate([recent_x, replay_x])
        t = np.concatenate([np.ones(recent_x.shape[0]), np.zeros(replay_x.shape[0])]).astype(self.dtype)[:, None]
        opt = nn.NAdam(nn.flatten(self.params), self.learning_rate)
        rng = self._train_rng
        last = float("nan")
        for epoch in range(epochs):
            total = 0.0
            for idx in nn.minibatches(x.shape[0], self.batch_size, rng):
                loss, grads = self._loss_and_grads(x[idx], t[idx], True, rng)
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite gate loss at epoch {epoch}")
                opt.step(grads)
                total += loss * len(idx)
            last = total / x.shape[0]
        log.debug("gate trained %d epochs, final loss %.4g", epochs, last)
        self.trained = True
        return last

    def score(self, x):
        """``A(x)`` in (0, 1) with dropout off."""
        if not self.trained:
            raise StateError("gate has not been trained")
        x = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        return nn.forward(self.params, self.spec, x).output[:, 0].astype(np.float64)


def train_gate(gate, hc, mpfc, rng, epochs=20, reinit=True):
    """Fit ``gate`` on the recent store against ``ceil(m)`` pseudo-examples per long-term class.

    Returns the number of pseudo-examples used, or None when there is nothing
    in long-term memory to contrast against (the gate is left untrained).
    """
    if hc.is_empty():
        raise StateError("gate training needs a non-empty recent store")
    if not mpfc.stats:
        return None
    if reinit:
        gate.reset()
    recent_x, _ = hc.data()
    long_term = [c for c in mpfc.classes if c in mpfc.stats]
    replay_x, _ = mpfc.replay_set(hc.pseudo_count(), rng, long_term)
    gate.fit(recent_x, replay_x, epochs)
    return replay_x.shape[0]


def odds_weighted_confidence(p_hc_max, a):
    """``max P_HC * A / (1 - A)`` with ``A`` clamped away from 0 and 1."""
    a = np.clip(np.asarray(a, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    return np.asarray(p_hc_max, dtype=np.float64) * a / (1.0 - a)


def route(p_hc, hc_classes, p_mpfc, mpfc_classes, a):
    """Pick recent or long-term answers per row.

    Returns ``(labels, used_recent)``. Recent memory wins only when its
    odds-weighted confidence strictly exceeds the long-term maximum.
    """
    p_hc = np.atleast_2d(p_hc)
    p_mpfc = np.atleast_2d(p_mpfc)
    psi = odds_weighted_confidence(p_hc.max(axis=1), a)
    use_hc = psi > p_mpfc.max(axis=1)
    labels = np.where(
        use_hc,
        np.asarray(hc_classes)[np.argmax(p_hc, axis=1)],
        np.asarray(mpfc_classes)[np.argmax(p_mpfc, axis=1)],
    )
    return labels, use_hc


def combined_predict(x, hc, mpfc, gate):
    """Class ids for ``x`` by gated routing between the two memories."""
    p_hc, hc_classes = hc.recall(np.atleast_2d(x))
    p_mpfc, mpfc_classes = mpfc.predict_proba(x)
    a = gate.score(x) if gate is not None and gate.trained else np.full(p_hc.shape[0], 0.5)
    return route(p_hc, hc_classes, p_mpfc, mpfc_classes, a)[0]
