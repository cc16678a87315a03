"""Sign vector in, per-user rates out.

The surface applies one sign per element; the effective channel seen by
the digital stage is H diag(signs) G. The digital stage is zero forcing
with a hard total power budget, which turns the product of effective
channel and precoder into c I and hands every user the same SINR c^2 over
the noise power.
"""

import numpy as np

from . import linalg
from .errors import ConfigError, ShapeMismatchError, SingularMatrixError


def validate_signs(signs, n_expected=None):
    """Return the sign vector as int8 after checking every entry is +-1."""
    arr = np.asarray(signs)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"sign vector must be 1-D, got shape {arr.shape}")
    if n_expected is not None and arr.size != int(n_expected):
        raise ShapeMismatchError(f"expected {n_expected} signs, got {arr.size}")
    values = np.asarray(arr, dtype=np.float64)
    if not np.all(np.abs(values) == 1.0):
        raise ConfigError("sign entries must be exactly -1 or +1")
    return values.astype(np.int8)


def effective_channel(channel, signs, gains):
    """H diag(signs) G, shape (n_users, n_chains)."""
    h = linalg.as_matrix(channel)
    g = linalg.as_matrix(gains)
    s = validate_signs(signs, h.shape[1])
    if g.shape[0] != h.shape[1]:
        raise ShapeMismatchError(f"gains rows {g.shape[0]} != channel columns {h.shape[1]}")
    return (h * s[None, :]) @ g


def zf_precoder(heq, power=1.0):
    """Interference-nulling precoder with Frobenius norm sqrt(power).

    Scaled right pseudo-inverse, so heq @ F is a positive multiple of the
    identity; a rank-deficient effective channel raises SingularMatrixError.
    Column k serves user k.
    """
    if not power > 0.0:
        raise ConfigError("power budget must be positive")
    pinv = linalg.right_pinv(heq)
    return np.sqrt(power) * pinv / linalg.frobenius_norm(pinv)


def user_sinr(channel, signs, gains, precoder, noise_power, k):
    """SINR of user k: own-stream power over other streams plus noise.

    Evaluated literally from the physical pieces, independent of any
    precoder structure.
    """
    if not noise_power > 0.0:
        raise ConfigError("noise_power must be positive")
    h = linalg.as_matrix(channel)
    f = linalg.as_matrix(precoder)
    s = validate_signs(signs, h.shape[1])
    row = (h[k] * s) @ np.asarray(gains, dtype=np.complex128)
    amplitudes = row @ f
    powers = np.abs(amplitudes) ** 2
    signal = float(powers[k])
    interference = float(powers.sum() - powers[k])
    return signal / (interference + noise_power)


def sum_rate(channel, signs, gains, precoder, noise_power):
    """Sum over users of log2(1 + SINR_k), in bits/s/Hz."""
    n_users = linalg.as_matrix(channel).shape[0]
    total = 0.0
    for k in range(n_users):
        total += np.log2(1.0 + user_sinr(channel, signs, gains, precoder, noise_power, k))
    return float(total)


def zf_sum_rate(channel, signs, gains, noise_power, power=1.0):
    """Sum rate under the zero-forcing stage for one sign vector.

    A sign vector whose effective channel is singular scores 0.0; the
    stochastic searches treat that as a dead candidate, not an error.
    """
    heq = effective_channel(channel, signs, gains)
    try:
        f = zf_precoder(heq, power)
    except SingularMatrixError:
        return 0.0
    return sum_rate(channel, signs, gains, f, noise_power)


def rates_from_effective(heq_batch, noise_power, power=1.0):
    """Vectorized zero-forcing sum rates for a stack of effective channels.

    heq_batch has shape (batch, n_users, n_chains). Slices failing the
    conditioning guard score 0.0. Cross-checked against the scalar route in
    the test suite.
    """
    heq = np.asarray(heq_batch, dtype=np.complex128)
    if heq.ndim != 3:
        raise ShapeMismatchError(f"expected (batch, users, chains), got {heq.shape}")
    n_users = heq.shape[1]
    gram = heq @ heq.conj().transpose(0, 2, 1)
    eigs = np.linalg.eigvalsh(gram)
    ok = (
        np.isfinite(eigs).all(axis=1)
        & (eigs[:, 0] > 0.0)
        & (eigs[:, -1] <= linalg.COND_LIMIT * eigs[:, 0])
    )
    eye = np.eye(n_users, dtype=np.complex128)
    safe = np.where(ok[:, None, None], gram, eye[None])
    lower = np.linalg.cholesky(safe)
    inv = np.linalg.solve(lower.conj().transpose(0, 2, 1), np.linalg.solve(lower, np.broadcast_to(eye, safe.shape)))
    pinv = heq.conj().transpose(0, 2, 1) @ inv
    norms = np.sqrt((np.abs(pinv) ** 2).sum(axis=(1, 2)))
    norms = np.where(ok & (norms > 0.0), norms, 1.0)
    f = np.sqrt(power) * pinv / norms[:, None, None]
    product_power = np.abs(heq @ f) ** 2
    signal = np.einsum("bkk->bk", product_power)
    interference = product_power.sum(axis=2) - signal
    rates = np.log2(1.0 + signal / (interference + noise_power)).sum(axis=1)
    return np.where(ok, rates, 0.0)


def zf_sum_rate_batch(channel, signs_batch, gains, noise_power, power=1.0):
    """zf_sum_rate over many candidate sign vectors at once.

    signs_batch is (batch, n_elements) with +-1 entries (trusted; the
    public single-vector route validates).
    """
    h = linalg.as_matrix(channel)
    g = linalg.as_matrix(gains)
    s = np.asarray(signs_batch, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != h.shape[1]:
        raise ShapeMismatchError(f"signs batch must be (batch, {h.shape[1]}), got {s.shape}")
    heq = (h[None, :, :] * s[:, None, :]) @ g
    return rates_from_effective(heq, noise_power, power)


def canonical_signs(channel, signs, gains):
    """Resolve the per-group sign ambiguity of a configuration.

    Negating every element of one group negates one column of the
    effective channel; the zero-forcing stage absorbs the flip, so the sum
    rate is unchanged bit for bit. Among the 2^n_chains equivalent
    configurations this picks the one where every diagonal entry of the
    effective channel has nonnegative real part. Classifier labels must be
    canonicalized, otherwise the equivalent optima wash out the
    per-element supervision signal.
    """
    h = linalg.as_matrix(channel)
    s = validate_signs(signs, h.shape[1])
    heq = effective_channel(h, s, gains)
    if heq.shape[0] != heq.shape[1]:
        raise ShapeMismatchError("canonicalization needs a square effective channel")
    diag = np.real(np.diagonal(heq))
    flips = np.where(diag < 0.0, -1, 1).astype(np.int8)
    per_element = np.repeat(flips, h.shape[1] // flips.size)
    return (s * per_element).astype(np.int8)
