"""Minimal dense-network substrate: parameters, forward/backward, losses, NAdam.

Networks are plain lists of :class:`LayerParams` described by a
:class:`NetworkSpec`. ``forward`` returns a :class:`ForwardPass` holding every
intermediate activation so callers can attach losses to hidden layers and feed
the corresponding gradients back into ``backward``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InputError, TrainingError

ACTIVATIONS = ("elu", "logistic", "softmax", "identity")


def elu(x):
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0)))


def logistic(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x):
    shifted = x - x.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def _activate(z, kind):
    if kind == "elu":
        return elu(z)
    if kind == "logistic":
        return logistic(z)
    if kind == "softmax":
        return softmax(z)
    return z


def activation_grad(z, a, kind):
    """Elementwise derivative of a hidden activation given pre- and post-values."""
    if kind == "elu":
        return np.where(z >= 0, 1.0, a + 1.0).astype(z.dtype, copy=False)
    if kind == "logistic":
        return a * (1.0 - a)
    if kind == "identity":
        return np.ones_like(z)
    raise ConfigError(f"activation {kind!r} cannot be used on a hidden layer")


@dataclass
class LayerParams:
    """Weights (fan_in x fan_out) and biases (fan_out) of one dense layer."""

    weights: np.ndarray
    biases: np.ndarray

    def copy(self):
        return LayerParams(self.weights.copy(), self.biases.copy())

    @property
    def size(self):
        return self.weights.size + self.biases.size


@dataclass(frozen=True)
class NetworkSpec:
    """Shape and activations of a dense stack.

    ``activation`` applies to hidden layers, ``output_activation`` to the
    last layer. Dropout is applied to each hidden activation in train mode.
    """

    input_dim: int
    hidden_dims: tuple
    output_dim: int
    activation: str = "elu"
    output_activation: str = "identity"
    dropout_rate: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) <= 0 for d in dims):
            raise ConfigError(f"network dimensions must be positive, got {dims}")
        for kind in (self.activation, self.output_activation):
            if kind not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {kind!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def layer_dims(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    def with_output_dim(self, output_dim):
        return replace(self, output_dim=output_dim)

    def parameter_count(self):
        return sum(fi * fo + fo for fi, fo in self.layer_dims)


def xavier_bound(fan_in, fan_out):
    return math.sqrt(6.0 / (fan_in + fan_out))


def xavier_init(spec, seed=None, dtype=np.float32):
    """Glorot-uniform weights, all biases set to one.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in spec.layer_dims:
        bound = xavier_bound(fan_in, fan_out)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        params.append(LayerParams(w, np.ones(fan_out, dtype=dtype)))
    return params


@dataclass
class ForwardPass:
    """Everything ``backward`` needs.

    ``activations[0]`` is the batch and ``activations[i]`` the clean output of
    layer ``i-1``. ``inputs[i]`` is what layer ``i`` actually consumed, i.e.
    ``activations[i]`` after the dropout mask ``masks[i]``.
    """

    activations: list
    inputs: list
    pre: list
    masks: list

    @property
    def output(self):
        return self.activations[-1]

    @property
    def logits(self):
        return self.pre[-1]


def forward(params, spec, batch, train_mode=False, rng=None):
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise InputError(f"expected batch of shape (n, {spec.input_dim}), got {batch.shape}")
    if len(params) != len(spec.layer_dims):
        raise InputError("parameter list does not match network spec")
    dtype = params[0].weights.dtype
    h = batch.astype(dtype, copy=False)
    fp = ForwardPass(activations=[h], inputs=[], pre=[], masks=[])
    rate = spec.dropout_rate
    last = len(params) - 1
    for i, layer in enumerate(params):
        mask = None
        if i > 0 and train_mode and rate > 0.0:
            if rng is None:
                raise InputError("train_mode with dropout needs an rng")
            mask = (rng.random(h.shape) >= rate).astype(dtype) / dtype.type(1.0 - rate)
            h = h * mask
        fp.masks.append(mask)
        fp.inputs.append(h)
        z = h @ layer.weights + layer.biases
        h = _activate(z, spec.output_activation if i == last else spec.activation)
        fp.pre.append(z)
        fp.activations.append(h)
    return fp


def backward(params, spec, fp, grad_logits, act_grads=None, input_grads=None):
    """Backpropagate through a dense stack.

    Args:
        grad_logits: dL/dz of the output layer (pre-activation).
        act_grads: extra gradients on clean hidden activations, keyed by
            index into ``fp.activations`` (1..L-1).
        input_grads: extra gradients on ``fp.inputs[i]``, the post-dropout
            input of layer ``i``.

    Returns:
        (list of (dW, db) per layer, gradient w.r.t. the batch)
    """
    act_grads = act_grads or {}
    input_grads = input_grads or {}
    grads = [None] * len(params)
    dz = grad_logits
    for i in range(len(params) - 1, -1, -1):
        grads[i] = (fp.inputs[i].T @ dz, dz.sum(axis=0))
        d_in = dz @ params[i].weights.T
        if i in input_grads:
            d_in = d_in + input_grads[i]
        if i == 0:
            return grads, d_in
        da = d_in * fp.masks[i] if fp.masks[i] is not None else d_in
        if i in act_grads:
            da = da + act_grads[i]
        dz = da * activation_grad(fp.pre[i - 1], fp.activations[i], spec.activation)
    return grads, None


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise InputError(f"labels shape {labels.shape} does not match batch {n}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    loss = float(-log_p[rows, labels].mean())
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def sigmoid_cross_entropy(logits, targets):
    """Mean binary cross-entropy on raw logits, with gradient."""
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=logits.dtype).reshape(logits.shape)
    # log(1 + e^x) - t x, written to stay finite for large |x|
    per = np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return float(per.mean()), (logistic(logits) - targets) / per.size


def mse(a, b):
    """Squared error summed over units, averaged over rows."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 1:
        return float(np.sum((a - b) ** 2))
    diff = (a - b).astype(np.float64)
    return float(np.sum(diff * diff) / a.shape[0])


def mse_grad(a, b):
    """d mse(a, b) / d a."""
    return 2.0 * (a - b) / a.shape[0]


@dataclass
class OptimizerState:
    first_moments: list
    second_moments: list
    multipliers: list
    learning_rate: float
    step: int = 0
    mu_product: float = 1.0


@dataclass
class NAdam:
    """Nesterov-accelerated Adam with the usual momentum-decay schedule.

    ``multipliers`` scale the learning rate per parameter array, which is how
    slower parameter groups (the decoder) are expressed.
    """

    params: list
    learning_rate: float = 2e-3
    multipliers: list = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum_decay: float = 4e-3
    state: OptimizerState = field(init=False)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        mults = list(self.multipliers) if self.multipliers is not None else [1.0] * len(self.params)
        if len(mults) != len(self.params):
            raise ConfigError("one multiplier per parameter array is required")
        self.state = OptimizerState(
            first_moments=[np.zeros_like(p) for p in self.params],
            second_moments=[np.zeros_like(p) for p in self.params],
            multipliers=mults,
            learning_rate=self.learning_rate,
        )

    def _mu(self, t):
        return self.beta1 * (1.0 - 0.5 * 0.96 ** (t * self.momentum_decay))

    def step(self, grads):
        """Apply one update in place. Raises TrainingError on non-finite gradients."""
        st = self.state
        if len(grads) != len(self.params):
            raise InputError("gradient list does not match parameters")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient at optimizer step {st.step + 1}")
        st.step += 1
        t = st.step
        mu_t = self._mu(t)
        mu_next = self._mu(t + 1)
        st.mu_product *= mu_t
        mu_prod_next = st.mu_product * mu_next
        bias2 = 1.0 - self.beta2 ** t
        for p, g, m, v, mult in zip(self.params, grads, st.first_moments, st.second_moments, st.multipliers):
            if p.shape != g.shape:
                raise InputError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = (mu_next / (1.0 - mu_prod_next)) * m + ((1.0 - mu_t) / (1.0 - st.mu_product)) * g
            denom = np.sqrt(v / bias2) + self.eps
            p -= (self.learning_rate * mult) * (m_hat / denom)


def flatten(params):
    """Parameter arrays of a layer list, in (W, b) order."""
    out = []
    for layer in params:
        out.extend((layer.weights, layer.biases))
    return out


def flatten_grads(grads):
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out


def minibatches(n, batch_size, rng):
    """Shuffled index batches; the final short batch is kept."""
    if batch_size <= 0:
        raise ConfigError("batch_size must be positive")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def gradient_check(loss_fn, params, h=1e-5, n_coords=None, seed=0, floor=1e-7):
    """Largest relative error between analytic and central-difference gradients.

    Args:
        loss_fn: ``arrays -> (loss, grads)`` over a list of float64 arrays,
            gradients aligned with ``arrays``.
        params: the arrays; perturbed in place and restored.
        n_coords: coordinates sampled per array (all when None).
        floor: lower bound on the error denominator so that coordinates with
            vanishing gradient do not dominate.
    """
    rng = np.random.default_rng(seed)
    _, analytic = loss_fn(params)
    analytic = [np.array(g, dtype=np.float64) for g in analytic]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if n_coords is not None and flat.size > n_coords:
            idx = rng.choice(flat.size, size=n_coords, replace=False)
        gflat = g.reshape(-1)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn(params)[0]
            flat[k] = orig - h
            down = loss_fn(params)[0]
            flat[k] = orig
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(numeric), abs(gflat[k]), floor)
            worst = max(worst, abs(numeric - gflat[k]) / denom)
    return worst
