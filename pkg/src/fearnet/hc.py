"""Recent memory: a nearest-exemplar probabilistic classifier over raw examples.

Class scores are inverse distances to the closest stored exemplar of each
class, ``beta_k = 1 / (eps + min_j ||x - u_kj||)``, normalized to sum to one.
Classes with nothing stored get probability zero. The store is emptied every
time its contents are consolidated into long-term memory.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, InputError, StateError


class ExemplarStore:
    def __init__(self, epsilon=1e-3):
        if not epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {epsilon}")
        self.epsilon = float(epsilon)
        self.dim = None
        self._chunks = {}  # label -> list of (n_i, d) arrays
        self._packed = None

    def __len__(self):
        return self.exemplar_count

    @property
    def exemplar_count(self):
        return sum(a.shape[0] for chunks in self._chunks.values() for a in chunks)

    @property
    def classes(self):
        """Stored class ids, ascending."""
        return sorted(self._chunks)

    def is_empty(self):
        return not self._chunks

    def store(self, x, y):
        """Store one feature vector under class ``y``."""
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 1:
            raise InputError(f"expected a single feature vector, got shape {x.shape}")
        self.store_batch(x[None, :], [y])

    def store_batch(self, xs, ys):
        xs = np.asarray(xs, dtype=np.float32)
        ys = np.asarray(ys).astype(np.int64).reshape(-1)
        if xs.ndim != 2 or xs.shape[0] != ys.shape[0]:
            raise InputError(f"features {xs.shape} and labels {ys.shape} are not aligned")
        if self.dim is not None and xs.shape[1] != self.dim:
            raise InputError(f"feature dimension {xs.shape[1]} does not match store dimension {self.dim}")
        if xs.shape[0] == 0:
            return
        self.dim = xs.shape[1]
        for label in np.unique(ys):
            self._chunks.setdefault(int(label), []).append(xs[ys == label].copy())
        self._packed = None

    def clear(self):
        self._chunks.clear()
        self._packed = None
        self.dim = None

    def data(self):
        """All stored exemplars as ``(features, labels)`` grouped by ascending class."""
        if self.is_empty():
            return np.empty((0, self.dim or 0), dtype=np.float32), np.empty(0, dtype=np.int64)
        xs, ys = [], []
        for label in self.classes:
            block = np.concatenate(self._chunks[label])
            xs.append(block)
            ys.append(np.full(block.shape[0], label, dtype=np.int64))
        return np.concatenate(xs), np.concatenate(ys)

    def class_counts(self):
        return {label: sum(a.shape[0] for a in self._chunks[label]) for label in self.classes}

    def mean_per_class(self):
        """Average number of stored examples per stored class."""
        if self.is_empty():
            raise StateError("store is empty")
        return self.exemplar_count / len(self._chunks)

    def pseudo_count(self):
        """Pseudo-examples to generate per long-term class: ceil of the mean per class."""
        return int(math.ceil(self.mean_per_class()))

    def _pack(self):
        if self._packed is None:
            xs, ys = self.data()
            labels = np.asarray(self.classes, dtype=np.int64)
            starts = np.searchsorted(ys, labels)
            self._packed = (xs.astype(np.float64), labels, starts)
        return self._packed

    def min_distances(self, xs):
        """Per-class nearest-exemplar distance, shape (n, n_classes)."""
        if self.is_empty():
            raise StateError("recall on an empty store")
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        if xs.shape[1] != self.dim:
            raise InputError(f"query dimension {xs.shape[1]} does not match store dimension {self.dim}")
        packed, labels, starts = self._pack()
        out = np.empty((xs.shape[0], labels.size))
        for lo in range(0, xs.shape[0], 1024):
            d = cdist(xs[lo:lo + 1024], packed)
            out[lo:lo + 1024] = np.minimum.reduceat(d, starts, axis=1)
        return out

    def recall(self, xs):
        """Posterior over stored classes.

        Returns ``(probs, classes)`` where ``probs[i, k]`` is the probability
        of ``classes[k]``. A 1-D query gives a 1-D probability vector. Absent
        classes are simply not columns, i.e. they carry probability zero.
        """
        single = np.asarray(xs).ndim == 1
        dist = self.min_distances(xs)
        beta = 1.0 / (self.epsilon + dist)
        probs = beta / beta.sum(axis=1, keepdims=True)
        classes = self._pack()[1].copy()
        return (probs[0] if single else probs), classes

    def predict(self, xs):
        """Argmax class id; ties go to the lowest id."""
        probs, classes = self.recall(np.atleast_2d(xs))
        return classes[np.argmax(probs, axis=1)]

    def nbytes(self):
        """Bytes held as 32-bit floats."""
        return 4 * self.exemplar_count * (self.dim or 0)
