"""Per-element classifier bank: features, training, inference, persistence.

One independent MLP per surface element maps the flattened channel entry
phases to the posterior that the element's sign is +1. Element n trains
from substream (seed, n), so banks are reproducible regardless of
training order or worker count.

Bank file payload (version 1, envelope shared with the dataset format)::

    u64      training seed
    u32      classifier count
    u32      layer count D
    u32 x D  layer sizes (shared by every classifier)
    per classifier, layers in order: f64 LE weights row-major, f64 LE biases
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import mlp
from .channel import substream
from .dataio import atomic_write, pack_frame, unpack_frame, _Cursor
from .errors import ConfigError, DataFormatError, ShapeMismatchError

BANK_MAGIC = b"RISBBANK"

HIDDEN_PRESETS = {
    "small": (64, 32),
    "medium": (256, 80, 80),
    "large": (512, 256, 128),
}


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by every classifier in a bank."""

    hidden_sizes: tuple = (64, 32)
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs_max: int = 500
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    dropout_keep: float = 0.9
    validation_fraction: float = 0.2
    stop_threshold: float = 0.01
    marked_stride: int = 10
    seed: int = 0

    def __post_init__(self):
        if len(self.hidden_sizes) < 1 or any(int(h) < 1 for h in self.hidden_sizes):
            raise ConfigError("hidden_sizes must list positive widths")
        if not self.learning_rate > 0.0:
            raise ConfigError("learning_rate must be positive")
        if int(self.batch_size) < 1:
            raise ConfigError("batch_size must be at least 1")
        if int(self.epochs_max) < 1:
            raise ConfigError("epochs_max must be at least 1")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ConfigError("rmsprop_decay must lie in (0, 1)")
        if not self.rmsprop_epsilon > 0.0:
            raise ConfigError("rmsprop_epsilon must be positive")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError("dropout_keep must lie in (0, 1]")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if not self.stop_threshold > 0.0:
            raise ConfigError("stop_threshold must be positive")
        if int(self.marked_stride) < 1:
            raise ConfigError("marked_stride must be at least 1")


@dataclass
class ClassifierBank:
    """One classifier per element, in element order."""

    classifiers: list

    @property
    def n_elements(self):
        return len(self.classifiers)

    @property
    def layer_sizes(self):
        return self.classifiers[0].layer_sizes


def channel_phases(channel):
    """Flattened entry phases in (-pi, pi], the only input features.

    Index k * n_elements + n holds the phase of channel[k, n]. Scaling the
    channel by a positive constant leaves every phase unchanged, so the
    bank is scale invariant by construction.
    """
    theta = np.angle(np.asarray(channel, dtype=np.complex128)).ravel()
    theta[theta == -np.pi] = np.pi
    return theta


def phase_features(channels):
    """channel_phases stacked over a batch of channels."""
    arr = np.asarray(channels, dtype=np.complex128)
    if arr.ndim != 3:
        raise ShapeMismatchError(f"expected (batch, users, elements), got {arr.shape}")
    theta = np.angle(arr).reshape(arr.shape[0], -1)
    theta[theta == -np.pi] = np.pi
    return theta


def signs_to_labels(signs):
    """{-1, +1} -> {0, 1} targets."""
    return (np.asarray(signs, dtype=np.float64) + 1.0) / 2.0


def labels_to_signs(labels):
    """{0, 1} (or posteriors) -> {-1, +1}; the 0.5 boundary maps to +1."""
    return np.where(np.asarray(labels, dtype=np.float64) >= 0.5, 1, -1).astype(np.int8)


def preprocess(channel, signs):
    """(features, 0/1 labels) for one labeled channel."""
    return channel_phases(channel), signs_to_labels(signs)


def _marked(epoch, cfg):
    return epoch % cfg.marked_stride == 0 or epoch == cfg.epochs_max


def train_classifier(features, labels, val_features, val_labels, cfg, rng):
    """Fit one element's classifier.

    Returns (classifier, rows) with one (epoch, train_mse, val_mse) row
    per marked epoch. Epoch 0 is recorded before any update; training
    stops at the first marked epoch where both MSEs reach the threshold.
    Per-epoch draw order: shuffle permutation, then per mini-batch one
    dropout mask per hidden layer (skipped entirely at dropout_keep 1.0).
    """
    sizes = (features.shape[1], *cfg.hidden_sizes, 1)
    clf = mlp.init_classifier(sizes, rng)
    params = clf.weights + clf.biases
    state = mlp.rmsprop_init(params)
    rows = [(0, mlp.mse_loss(mlp.forward(clf, features), labels),
             mlp.mse_loss(mlp.forward(clf, val_features), val_labels))]
    if rows[0][1] <= cfg.stop_threshold and rows[0][2] <= cfg.stop_threshold:
        return clf, rows
    n_train = features.shape[0]
    n_hidden = len(cfg.hidden_sizes)
    for epoch in range(1, cfg.epochs_max + 1):
        perm = rng.permutation(n_train)
        for lo in range(0, n_train, cfg.batch_size):
            sel = perm[lo : lo + cfg.batch_size]
            if cfg.dropout_keep < 1.0:
                masks = [
                    (rng.random((sel.size, clf.layer_sizes[i + 1])) < cfg.dropout_keep)
                    / cfg.dropout_keep
                    for i in range(n_hidden)
                ]
            else:
                masks = None
            grad_w, grad_b, _ = mlp._loss_grads(clf, features[sel], labels[sel], masks)
            mlp.rmsprop_step(
                params,
                grad_w + grad_b,
                state,
                cfg.learning_rate,
                cfg.rmsprop_decay,
                cfg.rmsprop_epsilon,
            )
        if _marked(epoch, cfg):
            train_mse = mlp.mse_loss(mlp.forward(clf, features), labels)
            val_mse = mlp.mse_loss(mlp.forward(clf, val_features), val_labels)
            rows.append((epoch, train_mse, val_mse))
            if train_mse <= cfg.stop_threshold and val_mse <= cfg.stop_threshold:
                break
    return clf, rows


def train_bank(features, labels, val_features, val_labels, cfg, n_workers=1):
    """Train one classifier per label column.

    labels and val_labels are (samples, n_elements) 0/1 arrays. Element n
    uses substream (cfg.seed, n) for everything random, so results do not
    depend on training order or worker count. Returns (bank, history)
    where history rows are (element, epoch, train_mse, val_mse).
    """
    feats = np.asarray(features, dtype=np.float64)
    labs = np.asarray(labels, dtype=np.float64)
    vfeats = np.asarray(val_features, dtype=np.float64)
    vlabs = np.asarray(val_labels, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ConfigError("training set must be a nonempty 2-D feature array")
    if labs.ndim != 2 or labs.shape[0] != feats.shape[0]:
        raise ConfigError("need one label row per training sample")
    if vfeats.shape[0] == 0 or vlabs.shape != (vfeats.shape[0], labs.shape[1]):
        raise ConfigError("validation arrays must be nonempty and aligned")
    n_out = labs.shape[1]

    def job(n):
        rng = substream(cfg.seed, n)
        return train_classifier(feats, labs[:, n], vfeats, vlabs[:, n], cfg, rng)

    if int(n_workers) > 1:
        with ThreadPoolExecutor(max_workers=int(n_workers)) as pool:
            outcomes = list(pool.map(job, range(n_out)))
    else:
        outcomes = [job(n) for n in range(n_out)]
    history = []
    for n, (_, rows) in enumerate(outcomes):
        history.extend((n, epoch, tm, vm) for epoch, tm, vm in rows)
    return ClassifierBank([clf for clf, _ in outcomes]), history


def mean_history(history):
    """Average the per-element curves on the union epoch grid.

    Elements that stopped early carry their last recorded values forward.
    Returns (epochs, mean_train, mean_val) arrays.
    """
    per_element = {}
    for n, epoch, train_mse, val_mse in history:
        per_element.setdefault(n, []).append((epoch, train_mse, val_mse))
    epochs = sorted({epoch for rows in per_element.values() for epoch, _, _ in rows})
    mean_train = []
    mean_val = []
    for epoch in epochs:
        t_vals = []
        v_vals = []
        for rows in per_element.values():
            past = [r for r in rows if r[0] <= epoch]
            _, tm, vm = past[-1]
            t_vals.append(tm)
            v_vals.append(vm)
        mean_train.append(float(np.mean(t_vals)))
        mean_val.append(float(np.mean(v_vals)))
    return np.array(epochs), np.array(mean_train), np.array(mean_val)


def overfit_detected(epochs, mean_val):
    """Validation MSE strictly increasing across 3 consecutive marked epochs."""
    for i in range(len(mean_val) - 2):
        if mean_val[i] < mean_val[i + 1] < mean_val[i + 2]:
            return True
    return False


def underfit_detected(epochs, mean_train, mean_val, cfg):
    """Both mean MSEs above 5x threshold at the first marked epoch past
    half the epoch budget."""
    half = cfg.epochs_max // 2
    for epoch, tm, vm in zip(epochs, mean_train, mean_val):
        if epoch >= half:
            return tm > 5.0 * cfg.stop_threshold and vm > 5.0 * cfg.stop_threshold
    return False


def train_bank_adaptive(features, labels, val_features, val_labels, cfg,
                        n_workers=1, max_retrain=3):
    """train_bank plus the coarse fit-quality adjustment loop.

    After a full training run the mean curves are inspected: an overfit
    signature doubles the batch size, an underfit signature raises
    dropout_keep by 0.05 (capped at 1.0), then the bank retrains from
    scratch, at most max_retrain times. Returns
    (bank, history, final_cfg, adjustments).
    """
    adjustments = []
    current = cfg
    while True:
        bank, history = train_bank(features, labels, val_features, val_labels, current, n_workers)
        if len(adjustments) >= max_retrain:
            break
        epochs, mean_train, mean_val = mean_history(history)
        if overfit_detected(epochs, mean_val):
            current = replace(current, batch_size=current.batch_size * 2)
            adjustments.append(f"overfit: batch_size -> {current.batch_size}")
        elif underfit_detected(epochs, mean_train, mean_val, current):
            if current.dropout_keep >= 1.0:
                break
            current = replace(current, dropout_keep=min(1.0, current.dropout_keep + 0.05))
            adjustments.append(f"underfit: dropout_keep -> {current.dropout_keep:.2f}")
        else:
            break
    return bank, history, current, adjustments


def predict_signs(bank, features):
    """Sign vector for one feature vector; posteriors >= 0.5 map to +1."""
    posts = np.array([mlp.forward(clf, features) for clf in bank.classifiers])
    return labels_to_signs(posts)


def predict_signs_batch(bank, features):
    """Signs for a (batch, features) array; returns (batch, n_elements) int8."""
    cols = [mlp.forward(clf, features) for clf in bank.classifiers]
    return labels_to_signs(np.stack(cols, axis=1))


def accuracy_table(bank, features, signs):
    """Per-element agreement between predictions and reference signs."""
    ref = np.asarray(signs)
    pred = predict_signs_batch(bank, features)
    if pred.shape != ref.shape:
        raise ShapeMismatchError(f"prediction shape {pred.shape} != reference {ref.shape}")
    return (pred == ref).mean(axis=0)


def save_bank(bank, path, seed=0):
    """Serialize the bank atomically; layer sizes must agree across elements."""
    if not bank.classifiers:
        raise ConfigError("cannot save an empty bank")
    sizes = bank.classifiers[0].layer_sizes
    for clf in bank.classifiers:
        if clf.layer_sizes != sizes:
            raise ConfigError("all classifiers in a bank must share layer sizes")
    payload = bytearray()
    payload += struct.pack("<Q", int(seed))
    payload += struct.pack("<II", len(bank.classifiers), len(sizes))
    payload += struct.pack(f"<{len(sizes)}I", *sizes)
    for clf in bank.classifiers:
        for w, b in zip(clf.weights, clf.biases):
            payload += np.ascontiguousarray(w, dtype="<f8").tobytes()
            payload += np.ascontiguousarray(b, dtype="<f8").tobytes()
    atomic_write(path, pack_frame(BANK_MAGIC, bytes(payload)))


def load_bank(path):
    """Rebuild (bank, training_seed) from disk; validates the envelope."""
    with open(path, "rb") as handle:
        blob = handle.read()
    cur = _Cursor(unpack_frame(BANK_MAGIC, blob))
    (seed,) = cur.unpack("<Q")
    count, depth = cur.unpack("<II")
    if count < 1 or depth < 2:
        raise DataFormatError("bank must hold classifiers with at least two layers")
    sizes = cur.unpack(f"<{depth}I")
    if sizes[-1] != 1 or any(s < 1 for s in sizes):
        raise DataFormatError(f"stored layer sizes {sizes} are not a classifier stack")
    classifiers = []
    for _ in range(count):
        weights = []
        biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(cur.array("<f8", fan_in * fan_out).reshape(fan_in, fan_out))
            biases.append(cur.array("<f8", fan_out))
        classifiers.append(mlp.MlpClassifier(sizes, weights, biases))
    cur.finish()
    return ClassifierBank(classifiers), int(seed)
