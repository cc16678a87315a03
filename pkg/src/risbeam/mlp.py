"""Plain numpy multilayer perceptron with a single logistic output."""

import numpy as np

from .errors import ConfigError, ShapeMismatchError

# open-interval clamp: posteriors stay strictly inside (0, 1)
_POST_LO = np.nextafter(0.0, 1.0)
_POST_HI = np.nextafter(1.0, 0.0)


def truncated_normal(rng, shape, std=0.1, radius=2.0):
    """Normal draws, resampled while outside radius standard deviations."""
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > radius * std
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > radius * std
    return out


class MlpClassifier:
    """Rectifier net; weights[i] maps layer i to i+1, biases go with the target layer."""

    def __init__(self, layer_sizes, weights, biases):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.weights = weights
        self.biases = biases


def init_classifier(layer_sizes, rng):
    """Truncated-normal weights (std 0.1, cut at 2 std), zero biases.

    Weight tensors are drawn layer by layer in order; that order is part
    of the seeding contract.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ConfigError("need at least an input and an output layer")
    if any(s < 1 for s in sizes):
        raise ConfigError("layer sizes must be positive")
    if sizes[-1] != 1:
        raise ConfigError("a classifier has exactly one output unit")
    weights = [truncated_normal(rng, (a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return MlpClassifier(sizes, weights, biases)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _POST_LO, _POST_HI)


def _as_batch(clf, x):
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != clf.layer_sizes[0]:
        raise ShapeMismatchError(
            f"input must have {clf.layer_sizes[0]} features, got shape {np.shape(x)}"
        )
    return arr, single


def forward(clf, x):
    """Posterior for one sample (1-D input) or a batch (2-D); no dropout."""
    arr, single = _as_batch(clf, x)
    act = arr
    for w, b in zip(clf.weights[:-1], clf.biases[:-1]):
        act = np.maximum(act @ w + b, 0.0)
    post = _sigmoid(act @ clf.weights[-1] + clf.biases[-1])[:, 0]
    return float(post[0]) if single else post


def mse_loss(pred, labels):
    """Mean squared error between posteriors and 0/1 targets."""
    p = np.atleast_1d(np.asarray(pred, dtype=np.float64))
    t = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    if p.shape != t.shape:
        raise ShapeMismatchError(f"prediction shape {p.shape} != label shape {t.shape}")
    return float(np.mean((p - t) ** 2))


def _loss_grads(clf, x, labels, masks=None):
    """Mean-over-batch gradients of the squared error.

    masks, when given, holds one inverted-dropout mask per hidden layer
    (entries 0 or 1/keep), applied after the rectifier.
    """
    acts = [x]
    for i, (w, b) in enumerate(zip(clf.weights[:-1], clf.biases[:-1])):
        a = np.maximum(acts[-1] @ w + b, 0.0)
        if masks is not None:
            a = a * masks[i]
        acts.append(a)
    post = _sigmoid(acts[-1] @ clf.weights[-1] + clf.biases[-1])[:, 0]
    batch = x.shape[0]
    delta = ((2.0 / batch) * (post - labels) * post * (1.0 - post))[:, None]
    grad_w = [None] * len(clf.weights)
    grad_b = [None] * len(clf.weights)
    for i in range(len(clf.weights) - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ clf.weights[i].T
            if masks is not None:
                delta = delta * masks[i - 1]
            delta = delta * (acts[i] > 0.0)
    return grad_w, grad_b, float(np.mean((post - labels) ** 2))


def backward(clf, x, labels):
    """Gradients of the mean squared error over the batch; no dropout."""
    arr, single = _as_batch(clf, x)
    t = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    if t.shape != (arr.shape[0],):
        raise ShapeMismatchError(f"need one label per sample, got {t.shape}")
    grad_w, grad_b, _ = _loss_grads(clf, arr, t)
    return grad_w, grad_b


def rmsprop_init(params):
    """Zeroed second-moment accumulators, one per parameter tensor."""
    return [np.zeros_like(p) for p in params]


def rmsprop_step(params, grads, state, learning_rate, decay=0.9, epsilon=1e-8):
    """v <- decay v + (1-decay) g^2;  p <- p - lr g / (sqrt(v) + eps).

    Updates arrays in place and returns them. Tensors update independently.
    """
    if not (len(params) == len(grads) == len(state)):
        raise ShapeMismatchError("params, grads, and state must align")
    for p, g, v in zip(params, grads, state):
        v *= decay
        v += (1.0 - decay) * g * g
        p -= learning_rate * g / (np.sqrt(v) + epsilon)
    return params, state
