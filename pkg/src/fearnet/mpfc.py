"""Long-term memory: a symmetric autoencoder with a softmax head on its bottleneck.

The network is trained on ``cross-entropy + sum_j lambda_j * ||h_j - r_j||^2``
where ``h_j`` is the encoder activation at depth ``j`` (``h_0`` is the input,
``h_M`` the bottleneck) and ``r_j`` its decoder counterpart. The decoder
starts with a bottleneck-to-bottleneck layer producing ``r_M`` and then
mirrors the encoder back to the input width, so every weight in the
reconstruction list pairs with a real decoder output.

Per-class Gaussian statistics of bottleneck codes are the only long-term
record of old classes. Sampling them and decoding gives pseudo-examples that
are replayed while consolidating new classes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from ._random import substream
from .errors import ConfigError, InputError, StateError, TrainingError

log = logging.getLogger(__name__)

COVARIANCE_MODES = ("full", "diagonal")


def covariance_jitter(trace, dim):
    return max(1e-6 * float(trace) / dim, 1e-8)


@dataclass
class ClassStatistics:
    """Gaussian summary of one class in bottleneck space.

    ``cov`` is a (b, b) matrix in full mode and a length-b variance vector in
    diagonal mode. Both are stored as float32, jitter included.
    """

    mean: np.ndarray
    cov: np.ndarray
    count: int

    @property
    def mode(self):
        return "full" if self.cov.ndim == 2 else "diagonal"

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def scalar_count(self):
        return self.mean.size + self.cov.size

    def _factor(self):
        cov = self.cov.astype(np.float64)
        if cov.ndim == 1:
            return np.sqrt(cov)
        jitter = 0.0
        for _ in range(8):
            try:
                return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10.0, covariance_jitter(np.trace(cov), cov.shape[0]))
        raise TrainingError("class covariance is not positive definite")

    def sample(self, n, rng):
        """Draw ``n`` bottleneck codes from N(mean, cov), float64."""
        eps = rng.standard_normal((n, self.dim))
        factor = self._factor()
        if factor.ndim == 1:
            return self.mean.astype(np.float64) + eps * factor
        return self.mean.astype(np.float64) + eps @ factor.T


def estimate_statistics(codes, mode="full"):
    """Mean and jittered sample covariance of a block of codes.

    A single code gives ``jitter * I``. The diagonal variant is read off the
    full estimate so both modes agree exactly on diagonal data.
    """
    if mode not in COVARIANCE_MODES:
        raise ConfigError(f"covariance mode must be one of {COVARIANCE_MODES}, got {mode!r}")
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise InputError("need a non-empty (n, dim) block of codes")
    n, dim = codes.shape
    mean = codes.mean(axis=0)
    if n > 1:
        centered = codes - mean
        cov = centered.T @ centered / (n - 1)
        cov = 0.5 * (cov + cov.T)
    else:
        cov = np.zeros((dim, dim))
    cov[np.diag_indices(dim)] += covariance_jitter(np.trace(cov), dim)
    if mode == "diagonal":
        cov = np.diag(cov).copy()
    return ClassStatistics(mean.astype(np.float32), cov.astype(np.float32), n)


@dataclass
class ConsolidationReport:
    new_classes: list
    old_classes: list
    hc_size: int
    pseudo_per_class: int
    mixture_size: int
    final_loss: tuple = (float("nan"),) * 3

    @property
    def pseudo_total(self):
        return self.pseudo_per_class * len(self.old_classes)


@dataclass
class MPFC:
    """Encoder/decoder with softmax head, plus per-class bottleneck statistics.

    ``classes`` maps head columns to class ids, in the order classes were
    learned. ``stats_refresh`` controls what happens to old-class statistics
    after a consolidation: ``"reencode"`` re-estimates them from that class's
    pseudo-examples pushed through the updated encoder, ``"keep"`` leaves them.
    """

    input_dim: int
    hidden_dims: tuple = (140, 130)
    recon_weights: tuple = (1e4, 1.0, 0.1)
    dropout: float = 0.25
    learning_rate: float = 2e-3
    decoder_lr_multiplier: float = 0.01
    batch_size: int = 450
    covariance_mode: str = "full"
    stats_refresh: str = "reencode"
    seed: int = 0
    dtype: type = np.float32
    classes: list = field(default_factory=list, init=False)
    stats: dict = field(default_factory=dict, init=False)

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        self.recon_weights = tuple(float(w) for w in self.recon_weights)
        if not self.hidden_dims:
            raise ConfigError("mPFC needs at least one hidden layer")
        if len(self.recon_weights) != len(self.hidden_dims) + 1:
            raise ConfigError(
                f"need {len(self.hidden_dims) + 1} reconstruction weights (input plus one per hidden layer), "
                f"got {len(self.recon_weights)}"
            )
        if any(w < 0 for w in self.recon_weights):
            raise ConfigError("reconstruction weights must be non-negative")
        if self.covariance_mode not in COVARIANCE_MODES:
            raise ConfigError(f"covariance mode must be one of {COVARIANCE_MODES}")
        if self.stats_refresh not in ("reencode", "keep"):
            raise ConfigError("stats_refresh must be 'reencode' or 'keep'")
        if not 0 < self.decoder_lr_multiplier <= 1:
            raise ConfigError("decoder_lr_multiplier must be in (0, 1]")
        b = self.bottleneck_dim
        self.encoder_spec = nn.NetworkSpec(
            self.input_dim, self.hidden_dims[:-1], b, "elu", "elu", self.dropout
        )
        self.decoder_spec = nn.NetworkSpec(
            b, (b, *reversed(self.hidden_dims[:-1])), self.input_dim, "elu", "identity", 0.0
        )
        init_rng = substream(self.seed, "mpfc.init")
        self._head_rng = substream(self.seed, "mpfc.head")
        self._train_rng = substream(self.seed, "mpfc.dropout")
        self.encoder = nn.xavier_init(self.encoder_spec, init_rng, self.dtype)
        self.decoder = nn.xavier_init(self.decoder_spec, init_rng, self.dtype)
        self.head_spec = None
        self.head = None

    @property
    def bottleneck_dim(self):
        return self.hidden_dims[-1]

    @property
    def n_classes(self):
        return len(self.classes)

    def parameter_count(self):
        layers = self.encoder + self.decoder + (self.head or [])
        return sum(layer.size for layer in layers)

    def statistics_scalar_count(self):
        return sum(s.scalar_count for s in self.stats.values())

    # head bookkeeping

    def add_classes(self, labels):
        """Append head columns for unseen labels; existing columns are untouched."""
        new = [int(c) for c in labels if int(c) not in self.classes]
        if not new:
            return []
        width = self.n_classes + len(new)
        bound = nn.xavier_bound(self.bottleneck_dim, width)
        w_new = self._head_rng.uniform(-bound, bound, size=(self.bottleneck_dim, len(new))).astype(self.dtype)
        b_new = np.ones(len(new), dtype=self.dtype)
        if self.head is None:
            self.head = [nn.LayerParams(w_new, b_new)]
        else:
            old = self.head[0]
            self.head = [
                nn.LayerParams(np.concatenate([old.weights, w_new], axis=1), np.concatenate([old.biases, b_new]))
            ]
        self.head_spec = nn.NetworkSpec(self.bottleneck_dim, (), width, "elu", "softmax", 0.0)
        self.classes.extend(new)
        return new

    def _columns(self, labels):
        lookup = {c: i for i, c in enumerate(self.classes)}
        try:
            return np.fromiter((lookup[int(y)] for y in labels), dtype=np.int64, count=len(labels))
        except KeyError as exc:
            raise InputError(f"label {exc.args[0]} is not covered by the softmax head") from None

    # forward passes

    def _check_input(self, x):
        x = np.asarray(x)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise InputError(f"expected features of width {self.input_dim}, got shape {x.shape}")
        return x.astype(self.dtype, copy=False)

    def encode(self, x):
        """Bottleneck codes with dropout off."""
        return nn.forward(self.encoder, self.encoder_spec, self._check_input(x)).output

    def decode(self, codes):
        codes = np.atleast_2d(np.asarray(codes)).astype(self.dtype, copy=False)
        if codes.shape[1] != self.bottleneck_dim:
            raise InputError(f"codes must have width {self.bottleneck_dim}")
        return nn.forward(self.decoder, self.decoder_spec, codes).output

    def predict_proba(self, x):
        """Softmax over learned classes: ``(probs, classes)``."""
        if self.head is None:
            raise StateError("mPFC has not been trained on any class")
        fp = nn.forward(self.head, self.head_spec, self.encode(x))
        return fp.output, np.asarray(self.classes, dtype=np.int64)

    def predict(self, x):
        probs, classes = self.predict_proba(x)
        return classes[np.argmax(probs, axis=1)]

    # loss

    def _loss_and_grads(self, x, cols, train_mode=False, rng=None):
        """Joint loss on head-column targets and gradients in optimizer order."""
        M = len(self.hidden_dims)
        efp = nn.forward(self.encoder, self.encoder_spec, x, train_mode, rng)
        h_top = efp.output
        mask = None
        z = h_top
        if train_mode and self.dropout > 0:
            mask = (rng.random(h_top.shape) >= self.dropout).astype(h_top.dtype) / h_top.dtype.type(1.0 - self.dropout)
            z = h_top * mask
        hfp = nn.forward(self.head, self.head_spec, z)
        class_loss, d_logits = nn.softmax_cross_entropy(hfp.logits, cols)
        dfp = nn.forward(self.decoder, self.decoder_spec, z)

        recon = 0.0
        enc_act_grads = {}
        dec_act_grads = {}
        dec_out_grad = np.zeros_like(dfp.output)
        top_grad = np.zeros_like(h_top)
        for j, lam in enumerate(self.recon_weights):
            if lam == 0.0:
                continue
            h = efp.activations[j]
            k = M + 1 - j
            r = dfp.activations[k]
            recon += lam * nn.mse(r, h)
            g = (lam * nn.mse_grad(r, h)).astype(self.dtype, copy=False)
            if k == M + 1:
                dec_out_grad += g
            else:
                dec_act_grads[k] = g
            if j == M:
                top_grad -= g
            elif j > 0:
                enc_act_grads[j] = -g

        dec_grads, d_z_dec = nn.backward(self.decoder, self.decoder_spec, dfp, dec_out_grad, dec_act_grads)
        head_grads, d_z_head = nn.backward(self.head, self.head_spec, hfp, d_logits.astype(self.dtype, copy=False))
        d_top = d_z_dec + d_z_head
        if mask is not None:
            d_top = d_top * mask
        d_top = d_top + top_grad
        d_pre = d_top * nn.activation_grad(efp.pre[-1], h_top, "elu")
        enc_grads, _ = nn.backward(self.encoder, self.encoder_spec, efp, d_pre, enc_act_grads)
        grads = nn.flatten_grads(enc_grads) + nn.flatten_grads(head_grads) + nn.flatten_grads(dec_grads)
        return (class_loss + recon, class_loss, recon), grads

    def parameter_arrays(self):
        return nn.flatten(self.encoder) + nn.flatten(self.head) + nn.flatten(self.decoder)

    def loss(self, x, labels):
        """``(total, class_term, recon_term)`` with dropout off."""
        if self.head is None:
            raise StateError("mPFC has no softmax head yet")
        x = self._check_input(x)
        labels = np.asarray(labels).reshape(-1)
        if labels.shape[0] != x.shape[0]:
            raise InputError("batch and labels are not aligned")
        terms, _ = self._loss_and_grads(x, self._columns(labels))
        return terms

    # training

    def _optimizer(self):
        n_enc = 2 * len(self.encoder) + 2 * len(self.head)
        n_dec = 2 * len(self.decoder)
        mults = [1.0] * n_enc + [self.decoder_lr_multiplier] * n_dec
        return nn.NAdam(self.parameter_arrays(), self.learning_rate, mults)

    def fit(self, x, labels, epochs):
        """Minibatch NAdam on the joint loss. Labels must already have head columns."""
        x = self._check_input(x)
        cols = self._columns(np.asarray(labels).reshape(-1))
        if epochs <= 0:
            return (float("nan"),) * 3
        opt = self._optimizer()
        rng = self._train_rng
        last = (float("nan"),) * 3
        for epoch in range(epochs):
            sums = np.zeros(3)
            for idx in nn.minibatches(x.shape[0], self.batch_size, rng):
                terms, grads = self._loss_and_grads(x[idx], cols[idx], True, rng)
                if not math.isfinite(terms[0]):
                    raise TrainingError(f"non-finite mPFC loss at epoch {epoch}")
                try:
                    opt.step(grads)
                except TrainingError as exc:
                    raise TrainingError(f"{exc} (epoch {epoch})") from None
                sums += np.asarray(terms) * len(idx)
            last = tuple(float(v) for v in sums / x.shape[0])
            if epoch % 100 == 0 or epoch == epochs - 1:
                log.debug("mPFC epoch %d loss %.5g (class %.5g, recon %.5g)", epoch, *last)
        return last

    def train_base(self, x, labels, epochs=1000):
        labels = np.asarray(labels).reshape(-1)
        if labels.size == 0:
            raise InputError("base-knowledge set is empty")
        self.add_classes(np.unique(labels))
        return self.fit(x, labels, epochs)

    # statistics and replay

    def update_class_statistics(self, x, labels):
        """Replace the statistics of every class present in ``(x, labels)``."""
        x = self._check_input(x)
        labels = np.asarray(labels).reshape(-1)
        if labels.size == 0:
            raise StateError("no data to compute class statistics from")
        codes = self.encode(x)
        updated = []
        for c in np.unique(labels):
            self.stats[int(c)] = estimate_statistics(codes[labels == c], self.covariance_mode)
            updated.append(int(c))
        return updated

    def sample_codes(self, c, n, rng):
        if int(c) not in self.stats:
            raise StateError(f"no statistics stored for class {c}")
        if n < 1:
            raise InputError("need at least one sample")
        return self.stats[int(c)].sample(n, rng)

    def generate_pseudo_examples(self, c, n, rng):
        """Decode ``n`` samples from class ``c``'s Gaussian: ``(features, labels)``."""
        codes = self.sample_codes(c, n, rng)
        return self.decode(codes), np.full(n, int(c), dtype=np.int64)

    def replay_set(self, n_per_class, rng, classes=None):
        """Pseudo-examples for every (or the given) long-term class, ``n_per_class`` each."""
        classes = list(self.classes if classes is None else classes)
        if not classes:
            return np.empty((0, self.input_dim), dtype=self.dtype), np.empty(0, dtype=np.int64)
        xs, ys = zip(*(self.generate_pseudo_examples(c, n_per_class, rng) for c in classes))
        return np.concatenate(xs), np.concatenate(ys)

    def consolidate(self, hc_x, hc_y, epochs, rng, pseudorehearsal=True):
        """Fold recent-memory data into the network.

        Widens the head for new classes, fine-tunes on the recent data mixed
        with ``ceil(m)`` pseudo-examples per old class, then refreshes the
        statistics of every class.
        """
        hc_x = self._check_input(hc_x)
        hc_y = np.asarray(hc_y).reshape(-1)
        if hc_y.size == 0:
            raise StateError("nothing to consolidate")
        present = np.unique(hc_y)
        old = [c for c in self.classes if c not in set(present.tolist())]
        missing = [c for c in old if c not in self.stats]
        if missing:
            raise StateError(f"classes {missing} have no statistics to replay")
        n_pseudo = int(math.ceil(hc_y.size / present.size))
        if pseudorehearsal and old:
            px, py = self.replay_set(n_pseudo, rng, old)
        else:
            px, py = np.empty((0, self.input_dim), dtype=self.dtype), np.empty(0, dtype=np.int64)
        new = self.add_classes(present)
        mix_x = np.concatenate([hc_x, px])
        mix_y = np.concatenate([hc_y, py])
        final = self.fit(mix_x, mix_y, epochs)
        self.update_class_statistics(hc_x, hc_y)
        if self.stats_refresh == "reencode" and py.size:
            self.update_class_statistics(px, py)
        return ConsolidationReport(
            new_classes=new,
            old_classes=old,
            hc_size=int(hc_y.size),
            pseudo_per_class=n_pseudo if (pseudorehearsal and old) else 0,
            mixture_size=int(mix_y.size),
            final_loss=final,
        )
