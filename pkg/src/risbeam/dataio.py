"""Dataset generation and the binary persistence layer.

File envelope (shared with the classifier-bank format)::

    offset  size  field
    0       8     magic
    8       4     format version, u32 LE
    12      8     payload length, u64 LE
    20      4     CRC-32 of the payload (zlib), u32 LE
    24      ...   payload

Dataset payload (version 1), all little endian::

    u32 x6   n_elements, n_chains, n_users, subsurface_size, grid_h, grid_v
    f64 x4   spacing_h, spacing_v, power, noise_power
    u64      system seed
    u64      dataset seed
    u8       channel model tag: 0 = sv, 1 = gpp
    sv:      u32 n_paths, f64 gain_variance
    gpp:     f64 k_factor, u32 n_clusters, u32 rays_per_cluster,
             f64 x n_clusters cluster powers, f64 angle_spread, f64 doppler
    u32 x2   search iterations, candidates
    f64 x3   search elite_ratio, smoothing, prob_floor
    u64      sample count
    3 x      split (train, val, test): u64 count, u32 x count sorted indices
    per sample: complex128 x (n_users * n_elements) row-major channel,
             int8 x n_elements sign labels, f64 rate label

A text sidecar ``<path>.meta`` mirrors the key settings as ``key = value``
lines plus a creation timestamp; the binary file itself stays byte-stable
under a fixed seed.
"""

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from .channel import (
    GppChannelConfig,
    SVChannelConfig,
    SystemConfig,
    draw_channel,
    feeder_gains,
    substream,
)
from .errors import (
    ChecksumError,
    ConfigError,
    DataFormatError,
    TruncatedFileError,
    VersionMismatchError,
)
from .optim import CrossEntropyParams, cross_entropy_search_many
from .precoding import canonical_signs, validate_signs, zf_sum_rate

FORMAT_VERSION = 1
DATASET_MAGIC = b"RISBDATA"

# substream tags; disjoint from element/user/sample indices by magnitude
_SEARCH_TAG = 1000003
_SPLIT_TAG = 1000033


@dataclass
class DataSample:
    """One labeled channel draw."""

    channel: np.ndarray  # (n_users, n_elements) complex128
    signs: np.ndarray  # (n_elements,) int8, canonical gauge
    rate: float  # sum rate of signs at the config noise power
    model: str  # "sv" | "gpp"
    index: int


@dataclass
class Dataset:
    """Samples plus the full generating configuration and split indices."""

    system: SystemConfig
    channel_cfg: object
    search: CrossEntropyParams
    seed: int
    samples: list
    train_idx: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    val_idx: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    test_idx: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))

    @property
    def model(self):
        return "sv" if isinstance(self.channel_cfg, SVChannelConfig) else "gpp"


def atomic_write(path, data):
    """Write bytes to path through a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pack_frame(magic, payload):
    """Wrap payload bytes in the magic/version/length/checksum envelope."""
    if len(magic) != 8:
        raise ConfigError("magic must be 8 bytes")
    head = magic + struct.pack("<IQI", FORMAT_VERSION, len(payload), zlib.crc32(payload))
    return head + payload


def unpack_frame(magic, blob):
    """Validate the envelope and return the payload bytes.

    Raises distinct errors for bad magic, unknown version (before touching
    the payload), truncation, and checksum mismatch.
    """
    if len(blob) < 24:
        raise TruncatedFileError("file shorter than the format header")
    if blob[:8] != magic:
        raise DataFormatError(f"bad magic {blob[:8]!r}, expected {magic!r}")
    version, length, crc = struct.unpack_from("<IQI", blob, 8)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version} is not readable (expect {FORMAT_VERSION})")
    payload = blob[24:]
    if len(payload) < length:
        raise TruncatedFileError(f"payload holds {len(payload)} of {length} declared bytes")
    if len(payload) > length:
        raise DataFormatError(f"{len(payload) - length} trailing bytes after the payload")
    if zlib.crc32(payload) != crc:
        raise ChecksumError("payload checksum mismatch")
    return payload


class _Cursor:
    """Sequential reader over a payload; overruns raise DataFormatError."""

    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, count):
        if self.pos + count > len(self.buf):
            raise DataFormatError("payload ended inside a field")
        out = self.buf[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def finish(self):
        if self.pos != len(self.buf):
            raise DataFormatError(f"{len(self.buf) - self.pos} unread bytes left in the payload")


def generate_dataset(count, system, channel_cfg, search, seed, chunk=512):
    """Draw `count` channels and label each with the cross-entropy search.

    Sample q draws its channel from substreams (seed, q, k, m) and its
    search from substream (seed, q, search-tag); labels are canonicalized
    (nonnegative real effective-channel diagonal) and the stored rate is
    recomputed from the canonical signs, which the gauge flip leaves
    bit-identical.
    """
    count = int(count)
    if count < 1:
        raise ConfigError("dataset needs at least one sample")
    if int(chunk) < 1:
        raise ConfigError("chunk must be positive")
    gains = feeder_gains(system, "all_ones")
    model = "sv" if isinstance(channel_cfg, SVChannelConfig) else "gpp"
    samples = []
    for lo in range(0, count, int(chunk)):
        hi = min(lo + int(chunk), count)
        channels = np.stack([draw_channel(system, channel_cfg, seed, key=(q,)) for q in range(lo, hi)])
        rngs = [substream(seed, q, _SEARCH_TAG) for q in range(lo, hi)]
        results = cross_entropy_search_many(
            channels, gains, system.noise_power, search, rngs, system.power
        )
        for offset, res in enumerate(results):
            q = lo + offset
            signs = canonical_signs(channels[offset], res.signs, gains)
            rate = zf_sum_rate(channels[offset], signs, gains, system.noise_power, system.power)
            samples.append(DataSample(channels[offset], signs, rate, model, q))
    return Dataset(system, channel_cfg, search, int(seed), samples)


def split_dataset(dataset, test_fraction=0.2, seed=0, val_fraction=0.2):
    """Disjoint exhaustive train/val/test split by shuffled indices.

    test_fraction applies to the whole set, val_fraction to what remains;
    both must lie in (0, 1) and sum below 1. Index arrays are stored
    sorted.
    """
    for name, frac in (("test_fraction", test_fraction), ("val_fraction", val_fraction)):
        if not 0.0 < frac < 1.0:
            raise ConfigError(f"{name} must lie in (0, 1)")
    if test_fraction + val_fraction >= 1.0:
        raise ConfigError("split fractions must sum below 1")
    total = len(dataset.samples)
    n_test = round(total * test_fraction)
    n_val = round((total - n_test) * val_fraction)
    n_train = total - n_test - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError("split leaves an empty subset; need more samples")
    perm = substream(seed, _SPLIT_TAG).permutation(total)
    return replace(
        dataset,
        test_idx=np.sort(perm[:n_test]).astype(np.int64),
        val_idx=np.sort(perm[n_test : n_test + n_val]).astype(np.int64),
        train_idx=np.sort(perm[n_test + n_val :]).astype(np.int64),
    )


def dataset_arrays(dataset, indices=None):
    """Stack samples into (channels, signs, rates) arrays, optionally indexed."""
    samples = dataset.samples
    if indices is not None:
        samples = [dataset.samples[int(i)] for i in indices]
    channels = np.stack([s.channel for s in samples])
    signs = np.stack([s.signs for s in samples])
    rates = np.array([s.rate for s in samples])
    return channels, signs, rates


def _pack_config(dataset):
    sys_cfg = dataset.system
    out = bytearray()
    out += struct.pack(
        "<6I",
        sys_cfg.n_elements,
        sys_cfg.n_chains,
        sys_cfg.n_users,
        sys_cfg.subsurface_size,
        sys_cfg.grid_h,
        sys_cfg.grid_v,
    )
    out += struct.pack(
        "<4d", sys_cfg.spacing_h, sys_cfg.spacing_v, sys_cfg.power, sys_cfg.noise_power
    )
    out += struct.pack("<QQ", sys_cfg.seed, dataset.seed)
    link = dataset.channel_cfg
    if isinstance(link, SVChannelConfig):
        out += struct.pack("<B", 0)
        out += struct.pack("<Id", link.n_paths, link.gain_variance)
    elif isinstance(link, GppChannelConfig):
        out += struct.pack("<B", 1)
        out += struct.pack("<dII", link.k_factor, link.n_clusters, link.rays_per_cluster)
        out += struct.pack(f"<{link.n_clusters}d", *link.cluster_powers)
        out += struct.pack("<dd", link.angle_spread, link.doppler)
    else:
        raise ConfigError(f"cannot serialize link config type {type(link).__name__}")
    search = dataset.search
    out += struct.pack("<II", search.iterations, search.candidates)
    out += struct.pack("<3d", search.elite_ratio, search.smoothing, search.prob_floor)
    return bytes(out)


def save_dataset(dataset, path):
    """Serialize atomically and drop a text sidecar next to the file."""
    payload = bytearray(_pack_config(dataset))
    payload += struct.pack("<Q", len(dataset.samples))
    for idx in (dataset.train_idx, dataset.val_idx, dataset.test_idx):
        arr = np.asarray(idx, dtype=np.uint32)
        payload += struct.pack("<Q", arr.size)
        payload += arr.astype("<u4").tobytes()
    for sample in dataset.samples:
        payload += np.ascontiguousarray(sample.channel, dtype="<c16").tobytes()
        payload += np.ascontiguousarray(sample.signs, dtype=np.int8).tobytes()
        payload += struct.pack("<d", sample.rate)
    atomic_write(path, pack_frame(DATASET_MAGIC, bytes(payload)))
    _write_sidecar(path, dataset)


def load_dataset(path):
    """Parse, validate, and rebuild a Dataset from disk."""
    with open(path, "rb") as handle:
        blob = handle.read()
    cur = _Cursor(unpack_frame(DATASET_MAGIC, blob))
    dims = cur.unpack("<6I")
    spacings = cur.unpack("<4d")
    sys_seed, ds_seed = cur.unpack("<QQ")
    try:
        system = SystemConfig(
            n_elements=dims[0],
            n_chains=dims[1],
            n_users=dims[2],
            subsurface_size=dims[3],
            grid_h=dims[4],
            grid_v=dims[5],
            spacing_h=spacings[0],
            spacing_v=spacings[1],
            power=spacings[2],
            noise_power=spacings[3],
            seed=sys_seed,
        )
        (tag,) = cur.unpack("<B")
        if tag == 0:
            n_paths, variance = cur.unpack("<Id")
            link = SVChannelConfig(n_paths=n_paths, gain_variance=variance)
        elif tag == 1:
            k_factor, n_clusters, rays = cur.unpack("<dII")
            powers = tuple(cur.unpack(f"<{n_clusters}d"))
            spread, doppler = cur.unpack("<dd")
            link = GppChannelConfig(
                k_factor=k_factor,
                n_clusters=n_clusters,
                rays_per_cluster=rays,
                cluster_powers=powers,
                angle_spread=spread,
                doppler=doppler,
            )
        else:
            raise DataFormatError(f"unknown channel model tag {tag}")
        iterations, candidates = cur.unpack("<II")
        elite, smoothing, floor = cur.unpack("<3d")
        search = CrossEntropyParams(
            iterations=iterations,
            candidates=candidates,
            elite_ratio=elite,
            smoothing=smoothing,
            prob_floor=floor,
        )
    except ConfigError as exc:
        raise DataFormatError(f"stored configuration is inconsistent: {exc}") from exc
    (count,) = cur.unpack("<Q")
    splits = []
    for _ in range(3):
        (size,) = cur.unpack("<Q")
        idx = cur.array("<u4", size).astype(np.int64)
        if size and (idx[-1] >= count or np.any(np.diff(idx) <= 0)):
            raise DataFormatError("split indices must be sorted, unique, and in range")
        splits.append(idx)
    model = "sv" if tag == 0 else "gpp"
    samples = []
    shape = (system.n_users, system.n_elements)
    for q in range(count):
        chan = cur.array("<c16", shape[0] * shape[1]).reshape(shape)
        raw_signs = cur.array(np.int8, system.n_elements)
        try:
            signs = validate_signs(raw_signs, system.n_elements)
        except ConfigError as exc:
            raise DataFormatError(f"sample {q}: {exc}") from exc
        (rate,) = cur.unpack("<d")
        if not (np.isfinite(rate) and rate >= 0.0):
            raise DataFormatError(f"sample {q}: rate label must be finite and nonnegative")
        samples.append(DataSample(chan, signs, rate, model, q))
    cur.finish()
    return Dataset(system, link, search, ds_seed, samples, splits[0], splits[1], splits[2])


def _write_sidecar(path, dataset):
    sys_cfg = dataset.system
    search = dataset.search
    lines = [
        f"n_elements = {sys_cfg.n_elements}",
        f"n_chains = {sys_cfg.n_chains}",
        f"n_users = {sys_cfg.n_users}",
        f"subsurface_size = {sys_cfg.subsurface_size}",
        f"channel_model = {dataset.model}",
        f"seed = {dataset.seed}",
        f"iterations = {search.iterations}",
        f"candidates = {search.candidates}",
        f"elite_ratio = {search.elite_ratio}",
        f"smoothing = {search.smoothing}",
        f"prob_floor = {search.prob_floor}",
        f"samples = {len(dataset.samples)}",
        f"created = {datetime.now(timezone.utc).isoformat()}",
    ]
    atomic_write(str(path) + ".meta", ("\n".join(lines) + "\n").encode())
