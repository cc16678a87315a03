"""Command line experiment runner.

Subcommands: generate (dataset), train (classifier bank), evaluate
(accuracy, rate, CDF, and runtime tables), sweep (rate vs SNR only), and
bench (runtime only). Settings resolve CLI flag > config file > default;
config files hold ``key = value`` lines in the same format as the dataset
sidecar. Everything except wall-clock columns is deterministic under
fixed seeds.

Exit codes: 0 success, 1 usage or configuration error, 2 data or model
error, 3 refusal (enumeration over the hard guard).
"""

import argparse
import csv
import io
import os
import sys
import time

import numpy as np

from .bank import (
    HIDDEN_PRESETS,
    TrainConfig,
    accuracy_table,
    load_bank,
    mean_history,
    phase_features,
    predict_signs_batch,
    save_bank,
    signs_to_labels,
    train_bank,
    train_bank_adaptive,
)
from .channel import GppChannelConfig, SVChannelConfig, make_system, substream
from .dataio import (
    atomic_write,
    dataset_arrays,
    generate_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .errors import (
    ConfigError,
    DataFormatError,
    EnumerationLimitError,
    ShapeMismatchError,
    SingularMatrixError,
)
from .optim import (
    ENUMERATION_GUARD,
    CrossEntropyParams,
    cross_entropy_search,
    exhaustive_search,
    matched_filter_signs,
)
from .precoding import rates_from_effective

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_REFUSED = 3

_BENCH_SIZES = (100, 500, 1000)
_BENCH_REPS = 5
_TIMING_TAG = 2000003


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped onto this tool's exit taxonomy."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def read_config_file(path):
    """Parse ``key = value`` lines; '#' comments and blank lines ignored."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for lineno, raw in enumerate(handle, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


class _Settings:
    """Flag > config file > default resolution with typed casts."""

    def __init__(self, args, conf):
        self.args = args
        self.conf = conf

    def get(self, key, cast, default, flag=None):
        value = getattr(self.args, flag or key, None)
        if value is not None:
            return value
        if key in self.conf:
            try:
                return cast(self.conf[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
        return default


def _float_list(text):
    parts = [p for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _hidden_sizes(text):
    name = str(text).strip()
    if name in HIDDEN_PRESETS:
        return HIDDEN_PRESETS[name]
    return tuple(int(p) for p in str(text).split(",") if p.strip())


def _snr_grid(settings):
    grid = settings.get("snr_grid", _float_list, (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0))
    if isinstance(grid, str):
        grid = _float_list(grid)
    grid = tuple(float(v) for v in grid)
    if len(grid) == 0:
        raise ConfigError("SNR grid must be nonempty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("SNR grid must be strictly increasing")
    return grid


def _noise_for_snr(snr_db, power):
    # SNR convention: power / noise_power, reported in dB
    return power / (10.0 ** (snr_db / 10.0))


def _resolve(args):
    conf = read_config_file(args.config) if getattr(args, "config", None) else {}
    settings = _Settings(args, conf)
    seed = settings.get("seed", int, 1)
    if seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    model = settings.get("model", str, "sv")
    if model not in ("sv", "gpp"):
        raise ConfigError(f"model must be sv or gpp, got {model!r}")
    out_dir = settings.get("out_dir", str, ".", flag="out_dir")
    return settings, seed, model, out_dir


def _build_system(settings, seed):
    n = settings.get("n_elements", int, 16, flag="n")
    k = settings.get("n_users", int, 2, flag="k")
    if k < 1 or n < 1 or n % k:
        raise ConfigError("element count must divide evenly across users")
    size = n // k
    grid_h = settings.get("grid_h", int, size)
    grid_v = settings.get("grid_v", int, size // grid_h if grid_h else 1)
    spacing = (settings.get("spacing_h", float, 0.5), settings.get("spacing_v", float, 0.5))
    return make_system(
        n,
        k,
        noise_power=settings.get("noise_power", float, 1.0),
        power=settings.get("power", float, 1.0),
        seed=seed,
        grid=(grid_h, grid_v),
        spacing=spacing,
    )


def _build_link(settings, model):
    if model == "sv":
        return SVChannelConfig(
            n_paths=settings.get("n_paths", int, 3),
            gain_variance=settings.get("gain_variance", float, 1.0),
        )
    return GppChannelConfig(
        k_factor=settings.get("k_factor", float, 3.0),
        n_clusters=settings.get("n_clusters", int, 3),
        rays_per_cluster=settings.get("rays_per_cluster", int, 8),
        cluster_powers=settings.get("cluster_powers", _float_list, (0.6, 0.3, 0.1)),
        angle_spread=settings.get("angle_spread", float, 0.05),
    )


def _build_search(settings):
    return CrossEntropyParams(
        iterations=settings.get("iterations", int, 30),
        candidates=settings.get("candidates", int, 200),
        elite_ratio=settings.get("elite_ratio", float, 0.1),
        smoothing=settings.get("smoothing", float, 0.7),
        prob_floor=settings.get("prob_floor", float, 0.05),
    )


def _build_train(settings, seed):
    return TrainConfig(
        hidden_sizes=settings.get("hidden_sizes", _hidden_sizes, (64, 32)),
        learning_rate=settings.get("learning_rate", float, 1e-3),
        batch_size=settings.get("batch_size", int, 128),
        epochs_max=settings.get("epochs_max", int, 500),
        rmsprop_decay=settings.get("rmsprop_decay", float, 0.9),
        rmsprop_epsilon=settings.get("rmsprop_epsilon", float, 1e-8),
        dropout_keep=settings.get("dropout_keep", float, 0.9),
        validation_fraction=settings.get("val_fraction", float, 0.2),
        stop_threshold=settings.get("stop_threshold", float, 0.01),
        marked_stride=settings.get("marked_stride", int, 10),
        seed=seed,
    )


def _dataset_path(out_dir, model):
    return os.path.join(out_dir, f"dataset_{model}.bin")


def _bank_path(out_dir, model):
    return os.path.join(out_dir, f"bank_{model}.bin")


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write(path, buf.getvalue().encode())


def _all_ones_gains(system):
    from .channel import feeder_gains

    return feeder_gains(system, "all_ones")


def cmd_generate(args):
    settings, seed, model, out_dir = _resolve(args)
    os.makedirs(out_dir, exist_ok=True)
    system = _build_system(settings, seed)
    link = _build_link(settings, model)
    search = _build_search(settings)
    count = settings.get("samples", int, 20000, flag="q")
    dataset = generate_dataset(count, system, link, search, seed)
    dataset = split_dataset(
        dataset,
        test_fraction=settings.get("test_fraction", float, 0.2),
        seed=seed,
        val_fraction=settings.get("val_fraction", float, 0.2),
    )
    path = _dataset_path(out_dir, model)
    save_dataset(dataset, path)
    mean_rate = float(np.mean([s.rate for s in dataset.samples]))
    print(f"wrote {count} {model} samples to {path}")
    print(f"mean label rate {mean_rate:.4f} bits/s/Hz at noise power {system.noise_power:g}")
    return EXIT_OK


def _load_split_dataset(out_dir, model):
    dataset = load_dataset(_dataset_path(out_dir, model))
    if min(dataset.train_idx.size, dataset.val_idx.size, dataset.test_idx.size) < 1:
        raise DataFormatError("dataset carries no train/val/test split")
    return dataset


def _history_rows(history):
    rows = [
        (epoch, element, train_mse, val_mse)
        for element, epoch, train_mse, val_mse in history
    ]
    epochs, mean_train, mean_val = mean_history(history)
    rows.extend(
        (int(e), "mean", float(t), float(v)) for e, t, v in zip(epochs, mean_train, mean_val)
    )
    return rows


def cmd_train(args):
    settings, seed, model, out_dir = _resolve(args)
    os.makedirs(out_dir, exist_ok=True)
    dataset = _load_split_dataset(out_dir, model)
    tcfg = _build_train(settings, seed)
    workers = settings.get("n_workers", int, 1, flag="workers")
    train_ch, train_signs, _ = dataset_arrays(dataset, dataset.train_idx)
    val_ch, val_signs, _ = dataset_arrays(dataset, dataset.val_idx)
    feats = phase_features(train_ch)
    vfeats = phase_features(val_ch)
    labels = signs_to_labels(train_signs)
    vlabels = signs_to_labels(val_signs)
    if getattr(args, "auto_adjust", False):
        bank, history, tcfg, adjustments = train_bank_adaptive(
            feats, labels, vfeats, vlabels, tcfg, n_workers=workers
        )
        for note in adjustments:
            print(f"adjusted: {note}")
    else:
        bank, history = train_bank(feats, labels, vfeats, vlabels, tcfg, n_workers=workers)
    path = _bank_path(out_dir, model)
    save_bank(bank, path, seed)
    _write_csv(
        os.path.join(out_dir, "history.csv"),
        ("epoch", "classifier_index", "train_mse", "val_mse"),
        _history_rows(history),
    )
    _, _, mean_val = mean_history(history)
    print(f"trained {bank.n_elements} classifiers -> {path}")
    print(f"final mean val MSE {mean_val[-1]:.5f}")
    return EXIT_OK


def _scheme_sign_table(dataset, bank, want_oracle):
    """Signs per scheme on the test split; rates re-score per SNR later."""
    system = dataset.system
    gains = _all_ones_gains(system)
    channels, label_signs, _ = dataset_arrays(dataset, dataset.test_idx)
    feats = phase_features(channels)
    if bank.classifiers[0].layer_sizes[0] != feats.shape[1]:
        raise ShapeMismatchError(
            f"bank expects {bank.classifiers[0].layer_sizes[0]} features, "
            f"dataset provides {feats.shape[1]}"
        )
    table = {
        "learned": predict_signs_batch(bank, feats),
        "cross_entropy": label_signs,
        "matched_filter": np.stack(
            [
                matched_filter_signs(ch, gains, system.noise_power, system.power).signs
                for ch in channels
            ]
        ),
    }
    if want_oracle:
        if system.n_elements > ENUMERATION_GUARD:
            raise EnumerationLimitError(
                f"refusing exhaustive enumeration of 2**{system.n_elements} candidates"
            )
        table["exhaustive"] = np.stack(
            [exhaustive_search(ch, gains, system.noise_power, system.power).signs for ch in channels]
        )
    return channels, feats, label_signs, gains, table


def _mean_rate_rows(channels, gains, table, snr_grid, power):
    rows = []
    for snr_db in snr_grid:
        noise = _noise_for_snr(snr_db, power)
        for scheme, signs in table.items():
            heq = (channels * signs[:, None, :]) @ gains
            rates = rates_from_effective(heq, noise, power)
            rows.append((snr_db, scheme, float(rates.mean())))
    return rows


def _cdf_rows(channels, gains, table, snr_db, power):
    rows = []
    noise = _noise_for_snr(snr_db, power)
    for scheme, signs in table.items():
        heq = (channels * signs[:, None, :]) @ gains
        rates = np.sort(rates_from_effective(heq, noise, power))
        total = rates.size
        rows.extend(
            (scheme, float(r), (i + 1) / total) for i, r in enumerate(rates)
        )
    return rows


def _runtime_rows(dataset, bank, seed):
    """Median wall-clock of search vs bank inference per test batch size."""
    system = dataset.system
    gains = _all_ones_gains(system)
    channels, _, _ = dataset_arrays(dataset, dataset.test_idx)
    rows = []
    for size in _BENCH_SIZES:
        used = min(size, channels.shape[0])
        batch = channels[:used]
        search_times = []
        infer_times = []
        for rep in range(_BENCH_REPS):
            start = time.perf_counter()
            for q, ch in enumerate(batch):
                cross_entropy_search(
                    ch,
                    gains,
                    system.noise_power,
                    dataset.search,
                    substream(seed, rep, q, _TIMING_TAG),
                    system.power,
                )
            search_times.append(time.perf_counter() - start)
            start = time.perf_counter()
            predict_signs_batch(bank, phase_features(batch))
            infer_times.append(time.perf_counter() - start)
        search_med = float(np.median(search_times))
        infer_med = float(np.median(infer_times))
        rows.append(("cross_entropy", used, search_med, 1.0))
        rows.append(("learned", used, infer_med, search_med / infer_med))
    return rows


def cmd_evaluate(args):
    settings, seed, model, out_dir = _resolve(args)
    dataset = _load_split_dataset(out_dir, model)
    bank, _ = load_bank(_bank_path(out_dir, model))
    snr_grid = _snr_grid(settings)
    cdf_snr = settings.get("cdf_snr_db", float, 5.0, flag="cdf_snr_db")
    channels, feats, label_signs, gains, table = _scheme_sign_table(
        dataset, bank, getattr(args, "oracle", False)
    )
    accuracy = accuracy_table(bank, feats, label_signs)
    _write_csv(
        os.path.join(out_dir, "accuracy.csv"),
        ("element_index", "accuracy"),
        [(n, float(a)) for n, a in enumerate(accuracy)],
    )
    power = dataset.system.power
    _write_csv(
        os.path.join(out_dir, "rates.csv"),
        ("snr_db", "scheme", "mean_rate_bits_per_s_per_hz"),
        _mean_rate_rows(channels, gains, table, snr_grid, power),
    )
    _write_csv(
        os.path.join(out_dir, "cdf.csv"),
        ("scheme", "rate_bits_per_s_per_hz", "cumulative_probability"),
        _cdf_rows(channels, gains, table, cdf_snr, power),
    )
    _write_csv(
        os.path.join(out_dir, "runtime.csv"),
        ("scheme", "batch_size", "median_runtime_seconds", "speedup_vs_cross_entropy"),
        _runtime_rows(dataset, bank, seed),
    )
    print(f"test channels: {channels.shape[0]}")
    print(f"mean element accuracy {float(accuracy.mean()):.4f} (min {float(accuracy.min()):.4f})")
    for snr_db, scheme, rate in _mean_rate_rows(channels, gains, table, (cdf_snr,), power):
        print(f"mean rate at {snr_db:g} dB [{scheme}]: {rate:.4f} bits/s/Hz")
    return EXIT_OK


def cmd_sweep(args):
    settings, seed, model, out_dir = _resolve(args)
    dataset = _load_split_dataset(out_dir, model)
    bank, _ = load_bank(_bank_path(out_dir, model))
    snr_grid = _snr_grid(settings)
    channels, _, _, gains, table = _scheme_sign_table(dataset, bank, getattr(args, "oracle", False))
    _write_csv(
        os.path.join(out_dir, "rates.csv"),
        ("snr_db", "scheme", "mean_rate_bits_per_s_per_hz"),
        _mean_rate_rows(channels, gains, table, snr_grid, dataset.system.power),
    )
    print(f"wrote rate sweep over {len(snr_grid)} SNR points for {len(table)} schemes")
    return EXIT_OK


def cmd_bench(args):
    settings, seed, model, out_dir = _resolve(args)
    dataset = _load_split_dataset(out_dir, model)
    bank, _ = load_bank(_bank_path(out_dir, model))
    rows = _runtime_rows(dataset, bank, seed)
    _write_csv(
        os.path.join(out_dir, "runtime.csv"),
        ("scheme", "batch_size", "median_runtime_seconds", "speedup_vs_cross_entropy"),
        rows,
    )
    for scheme, size, med, speedup in rows:
        print(f"{scheme} batch {size}: median {med:.4f} s (speedup {speedup:.1f}x)")
    return EXIT_OK


def _add_common(parser):
    parser.add_argument("--config", help="key = value settings file")
    parser.add_argument("--seed", type=int, help="master seed (default 1)")
    parser.add_argument("--model", choices=("sv", "gpp"), help="channel model (default sv)")
    parser.add_argument("--n", type=int, help="total element count (default 16)")
    parser.add_argument("--k", type=int, help="user / chain count (default 2)")
    parser.add_argument("--q", type=int, help="sample count for generate (default 20000)")
    parser.add_argument("--snr-grid", dest="snr_grid", type=_float_list,
                        help="comma list of SNR points in dB, strictly increasing")
    parser.add_argument("--oracle", action="store_true",
                        help="include exhaustive enumeration (guarded)")
    parser.add_argument("--out-dir", dest="out_dir", help="artifact directory (default .)")
    parser.add_argument("--cdf-snr-db", dest="cdf_snr_db", type=float,
                        help="SNR for the rate CDF table (default 5)")
    parser.add_argument("--workers", type=int, help="training worker threads (default 1)")


def build_parser():
    parser = _Parser(prog="risbeam", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)
    for name, func, blurb in (
        ("generate", cmd_generate, "draw channels and label them with the search"),
        ("train", cmd_train, "fit the per-element classifier bank"),
        ("evaluate", cmd_evaluate, "accuracy, rate, CDF, and runtime tables"),
        ("sweep", cmd_sweep, "rate vs SNR table only"),
        ("bench", cmd_bench, "runtime table only"),
    ):
        sub = commands.add_parser(name, help=blurb)
        _add_common(sub)
        if name == "train":
            sub.add_argument("--auto-adjust", dest="auto_adjust", action="store_true",
                             help="retrain with coarse fit-quality adjustments")
        sub.set_defaults(func=func)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"risbeam: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EnumerationLimitError as exc:
        print(f"risbeam: refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (DataFormatError, ShapeMismatchError, SingularMatrixError) as exc:
        print(f"risbeam: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"risbeam: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
