"""Channel generation for a reflecting surface driven in per-chain groups.

A surface of ``n_elements`` 1-bit elements is split into ``n_chains``
contiguous groups (one per RF chain / user), each laid out as a planar
``grid_h x grid_v`` aperture with half-wavelength default spacing. Two
stochastic link models are provided:

* a clustered sparse model: a few complex-Gaussian path gains attached to
  planar steering vectors, scaled so the expected squared link norm is
  ``n_elements * gain_variance``;
* a Ricean mix of one deterministic steering component (random global
  phase) and a diffuse sum over clusters of rays, scaled so the expected
  squared link norm is ``subsurface_size``.

Every randomized quantity is drawn from a counter-keyed substream of one
master seed, so any link can be regenerated in isolation and generation
order never changes results.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatchError


@dataclass(frozen=True)
class SystemConfig:
    """Static geometry and budget of one simulated system.

    One RF chain per user; the surface splits evenly into per-chain groups
    whose planar aperture is grid_h columns by grid_v rows. Spacings are in
    wavelengths. ``power`` is the total transmit budget, ``noise_power``
    the per-user noise variance.
    """

    n_elements: int
    n_chains: int
    n_users: int
    subsurface_size: int
    grid_h: int
    grid_v: int
    spacing_h: float = 0.5
    spacing_v: float = 0.5
    power: float = 1.0
    noise_power: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_elements", "n_chains", "n_users", "subsurface_size", "grid_h", "grid_v"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.n_chains != self.n_users:
            raise ConfigError("one RF chain per user: n_chains must equal n_users")
        if self.n_elements != self.n_chains * self.subsurface_size:
            raise ConfigError("n_elements must equal n_chains * subsurface_size")
        if self.subsurface_size != self.grid_h * self.grid_v:
            raise ConfigError("subsurface_size must equal grid_h * grid_v")
        if not (self.spacing_h > 0.0 and self.spacing_v > 0.0):
            raise ConfigError("element spacings must be positive")
        if not self.power > 0.0:
            raise ConfigError("power must be positive")
        if not self.noise_power > 0.0:
            raise ConfigError("noise_power must be positive")
        if int(self.seed) < 0:
            raise ConfigError("seed must be nonnegative")


def make_system(n_elements, n_users, noise_power=1.0, power=1.0, seed=0, grid=None,
                spacing=(0.5, 0.5)):
    """SystemConfig helper: one chain per user, flat single-row apertures
    unless an explicit (grid_h, grid_v) split is given."""
    if n_elements % n_users:
        raise ConfigError("n_elements must divide evenly across users")
    size = n_elements // n_users
    grid_h, grid_v = grid if grid is not None else (size, 1)
    return SystemConfig(
        n_elements=n_elements,
        n_chains=n_users,
        n_users=n_users,
        subsurface_size=size,
        grid_h=grid_h,
        grid_v=grid_v,
        spacing_h=spacing[0],
        spacing_v=spacing[1],
        power=power,
        noise_power=noise_power,
        seed=seed,
    )


@dataclass(frozen=True)
class SVChannelConfig:
    """Clustered sparse model: n_paths complex-Gaussian gains with variance
    gain_variance, angles uniform on (-pi, pi)."""

    n_paths: int = 3
    gain_variance: float = 1.0

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise ConfigError("n_paths must be at least 1")
        if not self.gain_variance > 0.0:
            raise ConfigError("gain_variance must be positive")


@dataclass(frozen=True)
class GppChannelConfig:
    """Ricean cluster model: k_factor weighs a deterministic steering term
    against a diffuse sum over n_clusters clusters of rays_per_cluster rays.

    cluster_powers must sum to one; ray angles scatter around each cluster
    center with standard deviation angle_spread (radians). doppler is
    recorded but inert: links are snapshots at time zero.
    """

    k_factor: float = 3.0
    n_clusters: int = 3
    rays_per_cluster: int = 8
    cluster_powers: tuple = (0.6, 0.3, 0.1)
    angle_spread: float = 0.05
    doppler: float = 0.0

    def __post_init__(self):
        if not self.k_factor >= 0.0:
            raise ConfigError("k_factor must be nonnegative")
        if int(self.n_clusters) < 1 or int(self.rays_per_cluster) < 1:
            raise ConfigError("cluster and ray counts must be at least 1")
        powers = np.asarray(self.cluster_powers, dtype=float)
        if powers.ndim != 1 or powers.size != self.n_clusters:
            raise ConfigError("cluster_powers must list one power per cluster")
        if np.any(powers < 0.0):
            raise ConfigError("cluster powers must be nonnegative")
        if abs(float(powers.sum()) - 1.0) > 1e-9:
            raise ConfigError("cluster powers must sum to 1 within 1e-9")
        if not self.angle_spread >= 0.0:
            raise ConfigError("angle_spread must be nonnegative")


def substream(seed, *key):
    """Independent generator for one tagged draw site under a master seed."""
    spawn = tuple(int(k) for k in key)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn))


def array_response(azimuth, elevation, cfg):
    """Planar steering vector of one group, unit l2 norm.

    Kronecker product of the horizontal and vertical half-vectors; the
    entry indexed (i_h, i_v) carries
    exp(j 2 pi (i_h spacing_h sin(azimuth) + i_v spacing_v sin(elevation)))
    scaled by 1/sqrt(subsurface_size).
    """
    ih = np.arange(cfg.grid_h)
    iv = np.arange(cfg.grid_v)
    a_h = np.exp(2j * np.pi * cfg.spacing_h * np.sin(azimuth) * ih) / np.sqrt(cfg.grid_h)
    a_v = np.exp(2j * np.pi * cfg.spacing_v * np.sin(elevation) * iv) / np.sqrt(cfg.grid_v)
    return np.kron(a_h, a_v)


def steering_many(azimuths, elevations, cfg):
    """array_response stacked over angle arrays; returns (len, subsurface_size)."""
    az = np.atleast_1d(np.asarray(azimuths, dtype=float)).ravel()
    el = np.atleast_1d(np.asarray(elevations, dtype=float)).ravel()
    if az.size != el.size:
        raise ShapeMismatchError("need one elevation per azimuth")
    ih = np.arange(cfg.grid_h)
    iv = np.arange(cfg.grid_v)
    a_h = np.exp(2j * np.pi * cfg.spacing_h * np.sin(az)[:, None] * ih) / np.sqrt(cfg.grid_h)
    a_v = np.exp(2j * np.pi * cfg.spacing_v * np.sin(el)[:, None] * iv) / np.sqrt(cfg.grid_v)
    # kron layout: entry (i_h, i_v) sits at flat index i_h * grid_v + i_v
    return (a_h[:, :, None] * a_v[:, None, :]).reshape(az.size, cfg.subsurface_size)


def sv_link_from_paths(gains, azimuths, elevations, cfg):
    """Deterministic clustered-path combination.

    sqrt(n_elements / n_paths) * sum_l gains[l] * a(azimuths[l], elevations[l]).
    """
    gains = np.asarray(gains, dtype=np.complex128).ravel()
    vecs = steering_many(azimuths, elevations, cfg)
    if vecs.shape[0] != gains.size:
        raise ShapeMismatchError("need one steering vector per path gain")
    scale = np.sqrt(cfg.n_elements / gains.size)
    return scale * (gains[:, None] * vecs).sum(axis=0)


def sv_link(cfg, link_cfg, rng):
    """Draw one clustered-sparse link vector of length subsurface_size.

    Draw order (fixed, part of the determinism contract): gain real parts,
    gain imaginary parts, azimuths, elevations, each one vectorized call.
    """
    n_paths = link_cfg.n_paths
    scale = np.sqrt(link_cfg.gain_variance / 2.0)
    re = rng.standard_normal(n_paths)
    im = rng.standard_normal(n_paths)
    az = rng.uniform(-np.pi, np.pi, n_paths)
    el = rng.uniform(-np.pi, np.pi, n_paths)
    return sv_link_from_paths(scale * (re + 1j * im), az, el, cfg)


def gpp_los_from_angles(azimuth, elevation, phase, cfg):
    """Deterministic beam component sqrt(subsurface_size) e^{j phase} a(az, el)."""
    return np.sqrt(cfg.subsurface_size) * np.exp(1j * phase) * array_response(azimuth, elevation, cfg)


def gpp_nlos_from_rays(powers, phases, azimuths, elevations, cfg):
    """Diffuse component: sum over clusters p and rays j of
    sqrt(subsurface_size * powers[p] / n_rays) e^{j phases[p, j]} a(az[p, j], el[p, j])."""
    powers = np.asarray(powers, dtype=float)
    phases = np.asarray(phases, dtype=float)
    if phases.ndim != 2 or phases.shape[0] != powers.size:
        raise ShapeMismatchError("phases must be (n_clusters, n_rays)")
    n_rays = phases.shape[1]
    vecs = steering_many(np.asarray(azimuths).ravel(), np.asarray(elevations).ravel(), cfg)
    weights = np.sqrt(cfg.subsurface_size * powers[:, None] / n_rays) * np.exp(1j * phases)
    return (weights.reshape(-1, 1) * vecs).sum(axis=0)


def gpp_components(cfg, link_cfg, rng):
    """Draw the deterministic and diffuse parts of one Ricean link.

    Draw order: beam azimuth, beam elevation, beam phase, cluster center
    azimuths, cluster center elevations, ray azimuth offsets, ray elevation
    offsets, ray phases.
    """
    az0 = rng.uniform(-np.pi, np.pi)
    el0 = rng.uniform(-np.pi, np.pi)
    phase0 = rng.uniform(-np.pi, np.pi)
    n_cl, n_rays = link_cfg.n_clusters, link_cfg.rays_per_cluster
    center_az = rng.uniform(-np.pi, np.pi, n_cl)
    center_el = rng.uniform(-np.pi, np.pi, n_cl)
    ray_az = center_az[:, None] + link_cfg.angle_spread * rng.standard_normal((n_cl, n_rays))
    ray_el = center_el[:, None] + link_cfg.angle_spread * rng.standard_normal((n_cl, n_rays))
    ray_phase = rng.uniform(-np.pi, np.pi, (n_cl, n_rays))
    los = gpp_los_from_angles(az0, el0, phase0, cfg)
    nlos = gpp_nlos_from_rays(link_cfg.cluster_powers, ray_phase, ray_az, ray_el, cfg)
    return los, nlos


def gpp_link(cfg, link_cfg, rng):
    """Ricean mix sqrt(k/(k+1)) los + sqrt(1/(k+1)) nlos of one drawn link."""
    los, nlos = gpp_components(cfg, link_cfg, rng)
    k = link_cfg.k_factor
    return np.sqrt(k / (k + 1.0)) * los + np.sqrt(1.0 / (k + 1.0)) * nlos


def feeder_gains(cfg, mode="all_ones", rng=None):
    """Block-diagonal feed matrix (n_elements x n_chains), one column per chain.

    Rows of column m outside its own group are exactly zero. Modes:
    all_ones (default) or random_phase (unit-modulus entries from rng).
    """
    gains = np.zeros((cfg.n_elements, cfg.n_chains), dtype=np.complex128)
    size = cfg.subsurface_size
    for m in range(cfg.n_chains):
        rows = slice(m * size, (m + 1) * size)
        if mode == "all_ones":
            gains[rows, m] = 1.0
        elif mode == "random_phase":
            if rng is None:
                raise ConfigError("random_phase feeder mode needs a generator")
            gains[rows, m] = np.exp(1j * rng.uniform(-np.pi, np.pi, size))
        else:
            raise ConfigError(f"unknown feeder mode {mode!r}")
    return gains


def assemble_links(links):
    """Stack per-user link vectors into the (n_users x n_elements) channel.

    links[k][m] is user k's length-subsurface_size vector for group m; row k
    of the result is the conjugate of the concatenation, so a row times a
    column vector is the user's receive inner product.
    """
    arr = np.asarray(links, dtype=np.complex128)
    if arr.ndim != 3:
        raise ShapeMismatchError(f"links must be (users, chains, subsurface), got {arr.shape}")
    n_users, n_chains, size = arr.shape
    return arr.conj().reshape(n_users, n_chains * size)


def draw_channel(cfg, link_cfg, seed, key=()):
    """One (n_users x n_elements) channel; link (k, m) always draws from
    substream (seed, *key, k, m)."""
    if isinstance(link_cfg, SVChannelConfig):
        draw = sv_link
    elif isinstance(link_cfg, GppChannelConfig):
        draw = gpp_link
    else:
        raise ConfigError(f"unknown link config type {type(link_cfg).__name__}")
    links = np.empty((cfg.n_users, cfg.n_chains, cfg.subsurface_size), dtype=np.complex128)
    for k in range(cfg.n_users):
        for m in range(cfg.n_chains):
            links[k, m] = draw(cfg, link_cfg, substream(seed, *key, k, m))
    return assemble_links(links)
