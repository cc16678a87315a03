"""Searches over the discrete sign alphabet of the surface.

Three routes produce sign vectors for a fixed channel draw: brute-force
enumeration (small element counts only), a cross-entropy method over
independent per-element Bernoulli probabilities, and a one-shot
per-element co-phasing baseline. All report an OptimResult whose rate is
recomputed once through the scalar literal route after the search, so the
stored value is exactly reproducible from the signs.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EnumerationLimitError
from .precoding import rates_from_effective, zf_sum_rate, zf_sum_rate_batch

# Hard refusal bound for exhaustive enumeration (2^22 candidates).
ENUMERATION_GUARD = 22

_CHUNK = 1 << 16


@dataclass(frozen=True)
class CrossEntropyParams:
    """Knobs of the cross-entropy search.

    candidates vectors are drawn per iteration; the top elite_ratio share
    pulls the Bernoulli model with the given smoothing; probabilities stay
    clamped to [prob_floor, 1 - prob_floor] so no element freezes.
    """

    iterations: int = 30
    candidates: int = 200
    elite_ratio: float = 0.1
    smoothing: float = 0.7
    prob_floor: float = 0.05

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise ConfigError("iterations must be at least 1")
        if int(self.candidates) < 1:
            raise ConfigError("candidates must be at least 1")
        if not 0.0 < self.elite_ratio < 1.0:
            raise ConfigError("elite_ratio must lie in (0, 1)")
        if not 0.0 < self.smoothing <= 1.0:
            raise ConfigError("smoothing must lie in (0, 1]")
        if not 0.0 < self.prob_floor < 0.5:
            raise ConfigError("prob_floor must lie in (0, 0.5)")

    @property
    def n_elite(self):
        # ceil guarantees at least one elite sample per iteration
        return math.ceil(self.elite_ratio * self.candidates)


@dataclass(frozen=True)
class OptimResult:
    """Outcome of one search on one channel.

    signs: chosen +-1 vector (int8). rate: scalar recomputation of the
    sum rate for those signs. evaluations: number of candidate scorings
    the search performed. trace: best-so-far rate per iteration from the
    vectorized scorer (nondecreasing).
    """

    signs: np.ndarray
    rate: float
    evaluations: int
    trace: np.ndarray


def random_signs(rng, n):
    """Uniform +-1 vector of length n."""
    return (rng.integers(0, 2, int(n)) * 2 - 1).astype(np.int8)


def exhaustive_search(channel, gains, noise_power, power=1.0):
    """Score every sign vector and keep the best.

    Enumeration follows natural binary order with -1 sorting before +1,
    and only strict improvements replace the incumbent, so rate ties
    resolve to the lexicographically smallest vector. Refuses above
    ENUMERATION_GUARD elements.
    """
    n = np.asarray(channel).shape[1]
    if n > ENUMERATION_GUARD:
        raise EnumerationLimitError(
            f"2**{n} sign vectors exceeds the enumeration guard (2**{ENUMERATION_GUARD})"
        )
    total = 1 << n
    shifts = np.arange(n - 1, -1, -1, dtype=np.uint64)
    best_rate = -np.inf
    best = None
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total), dtype=np.uint64)
        bits = (idx[:, None] >> shifts) & np.uint64(1)
        cand = bits.astype(np.float64) * 2.0 - 1.0
        rates = zf_sum_rate_batch(channel, cand, gains, noise_power, power)
        j = int(np.argmax(rates))
        if rates[j] > best_rate:
            best_rate = float(rates[j])
            best = cand[j].astype(np.int8)
    final = zf_sum_rate(channel, best, gains, noise_power, power)
    return OptimResult(best, final, total, np.array([final]))


def cross_entropy_search(channel, gains, noise_power, params, rng, power=1.0):
    """Cross-entropy method over independent per-element sign probabilities.

    Each iteration draws one uniform block (candidates x n_elements),
    thresholds it against the current probability of +1, scores the
    candidates, and pulls the probabilities toward the elite empirical
    frequencies. Returns the best vector ever scored.
    """
    h = np.asarray(channel)
    n = h.shape[1]
    p = np.full(n, 0.5)
    best_rate = -np.inf
    best = None
    trace = np.empty(params.iterations)
    for it in range(params.iterations):
        u = rng.random((params.candidates, n))
        cand = np.where(u < p, 1.0, -1.0)
        rates = zf_sum_rate_batch(h, cand, gains, noise_power, power)
        order = np.argsort(-rates, kind="stable")
        elite = cand[order[: params.n_elite]]
        freq = (elite > 0.0).mean(axis=0)
        p = (1.0 - params.smoothing) * p + params.smoothing * freq
        np.clip(p, params.prob_floor, 1.0 - params.prob_floor, out=p)
        j = int(np.argmax(rates))
        if rates[j] > best_rate:
            best_rate = float(rates[j])
            best = cand[j].astype(np.int8)
        trace[it] = best_rate
    final = zf_sum_rate(h, best, gains, noise_power, power)
    return OptimResult(best, final, params.iterations * params.candidates, trace)


def cross_entropy_search_many(channels, gains, noise_power, params, rngs, power=1.0):
    """cross_entropy_search over a stack of channels in lockstep.

    channels is (n_channels, n_users, n_elements); rngs supplies one
    generator per channel. Each channel's generator is advanced exactly as
    the single-channel routine would advance it (one uniform block per
    iteration), and candidates of all channels are scored in one stacked
    batch per iteration, which leaves the per-channel results bitwise
    identical to single runs while amortizing the numpy dispatch cost.
    """
    hs = np.asarray(channels, dtype=np.complex128)
    if hs.ndim != 3:
        raise ConfigError(f"channels must be (count, users, elements), got {hs.shape}")
    n_ch, n_users, n = hs.shape
    if len(rngs) != n_ch:
        raise ConfigError("need exactly one generator per channel")
    g = np.asarray(gains, dtype=np.complex128)
    s_cand = params.candidates
    p = np.full((n_ch, n), 0.5)
    best_rate = np.full(n_ch, -np.inf)
    best = np.zeros((n_ch, n), dtype=np.int8)
    trace = np.empty((n_ch, params.iterations))
    rows = np.arange(n_ch)
    for it in range(params.iterations):
        u = np.empty((n_ch, s_cand, n))
        for c in range(n_ch):
            u[c] = rngs[c].random((s_cand, n))
        cand = np.where(u < p[:, None, :], 1.0, -1.0)
        heq = (hs[:, None, :, :] * cand[:, :, None, :]) @ g
        rates = rates_from_effective(
            heq.reshape(n_ch * s_cand, n_users, g.shape[1]), noise_power, power
        ).reshape(n_ch, s_cand)
        order = np.argsort(-rates, axis=1, kind="stable")
        elite_idx = order[:, : params.n_elite]
        elite = np.take_along_axis(cand, elite_idx[:, :, None], axis=1)
        freq = (elite > 0.0).mean(axis=1)
        p = (1.0 - params.smoothing) * p + params.smoothing * freq
        np.clip(p, params.prob_floor, 1.0 - params.prob_floor, out=p)
        j = np.argmax(rates, axis=1)
        iter_best = rates[rows, j]
        improved = iter_best > best_rate
        best_rate = np.where(improved, iter_best, best_rate)
        best[improved] = cand[rows[improved], j[improved]].astype(np.int8)
        trace[:, it] = best_rate
    results = []
    for c in range(n_ch):
        final = zf_sum_rate(hs[c], best[c], g, noise_power, power)
        results.append(
            OptimResult(best[c].copy(), final, params.iterations * s_cand, trace[c].copy())
        )
    return results


def matched_filter_signs(channel, gains, noise_power, power=1.0):
    """Per-element co-phasing baseline, one rate evaluation total.

    Element n feeding chain m takes the sign aligning the real part of its
    own-user path product; exact zeros take +1. Ignores inter-user
    interference, which is what the searches improve on.
    """
    h = np.asarray(channel, dtype=np.complex128)
    g = np.asarray(gains, dtype=np.complex128)
    n = h.shape[1]
    n_chains = g.shape[1]
    size = n // n_chains
    owner = np.repeat(np.arange(n_chains), size)
    cols = np.arange(n)
    values = np.real(h[owner, cols] * g[cols, owner])
    signs = np.where(values >= 0.0, 1, -1).astype(np.int8)
    rate = zf_sum_rate(h, signs, g, noise_power, power)
    return OptimResult(signs, rate, 1, np.array([rate]))
