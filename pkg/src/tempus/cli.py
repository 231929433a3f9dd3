"""Command-line front end: ``tempus run|analyze|sweep|cost|encode``.

Exit codes: 0 success, 1 usage, 2 I/O, 3 malformed data.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from tempus import cost as costmod
from tempus import files
from tempus.attack import Channel, Defence, ExperimentConfig, run_experiment
from tempus.leakage import DEFAULT_MAX_BINS, analyze, build_matrix
from tempus.uarch import FIRST_ORDER, FULL, CoreConfig, Flush, encode_fence_t

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 1, 2, 3

CHANNELS = {c.name.lower(): c for c in Channel}
DEFENCES = {
    "none": Defence.NONE,
    "prime1": Defence.PRIME_ONCE,
    "prime2": Defence.PRIME_TWICE,
    "fence-first": Defence.FENCE_FIRST_ORDER,
    "fence-full": Defence.FENCE_FULL,
}
DEFENCE_NAMES = {v: k for k, v in DEFENCES.items()}
SWEEP_DEFENCES = ("none", "fence-first", "fence-full")
SUMMARY_KEYS = ("channel", "defence", "n", "m_mb", "m0_mb", "verdict", "seed")

_EXPERIMENT_KEYS = {"channel", "defence", "iterations", "seed", "noise_events", "noise_cycles", "core"}
_SWEEP_KEYS = _EXPERIMENT_KEYS | {"channels", "defences"}
_CORE_KEYS = {f.name for f in dataclasses.fields(CoreConfig)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config handling


def _load_config(path, allowed: set[str]) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise files.MalformedFile(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    unknown = set(raw) - allowed
    if unknown:
        raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
    core = raw.get("core", {})
    if not isinstance(core, dict):
        raise UsageError(f"{path}: 'core' must be an object")
    unknown = set(core) - _CORE_KEYS
    if unknown:
        raise UsageError(f"{path}: unknown core keys {sorted(unknown)}")
    return raw


def _pick(name: str, table: dict, value):
    try:
        return table[value]
    except (KeyError, TypeError):
        raise UsageError(f"unknown {name} {value!r}; choose from {', '.join(table)}") from None


def _experiment(args, conf: dict, channel=None, defence=None) -> ExperimentConfig:
    def get(flag, key, default):
        value = getattr(args, flag, None)
        return value if value is not None else conf.get(key, default)

    try:
        core = CoreConfig(**conf.get("core", {}))
        return ExperimentConfig(
            channel=channel or _pick("channel", CHANNELS, get("channel", "channel", "l1d")),
            defence=defence or _pick("defence", DEFENCES, get("defence", "defence", "none")),
            iterations=int(get("n", "iterations", 100_000)),
            seed=int(get("seed", "seed", 0)),
            noise_events=int(get("noise_events", "noise_events", 4)),
            noise_cycles=int(get("noise_cycles", "noise_cycles", 3)),
            core=core,
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def config_dict(cfg: ExperimentConfig) -> dict:
    return {
        "channel": cfg.channel.name.lower(),
        "defence": DEFENCE_NAMES[cfg.defence],
        "iterations": cfg.iterations,
        "seed": cfg.seed,
        "noise_events": cfg.noise_events,
        "noise_cycles": cfg.noise_cycles,
        "core": dataclasses.asdict(cfg.core),
    }


def config_digest(cfg: ExperimentConfig) -> str:
    blob = json.dumps(config_dict(cfg), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _summary(cfg_like: dict, n: int, result) -> dict:
    return {
        "channel": cfg_like.get("channel"),
        "defence": cfg_like.get("defence"),
        "n": n,
        "m_mb": round(result.m_millibits, 4),
        "m0_mb": round(result.m0_millibits, 4),
        "verdict": result.verdict.value,
        "seed": cfg_like.get("seed"),
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    cfg = _experiment(args, _load_config(args.config, _EXPERIMENT_KEYS))
    start = time.perf_counter()
    log = run_experiment(cfg)
    files.write_samples(args.out, log)
    files.write_meta(args.out, config_dict(cfg))
    elapsed = time.perf_counter() - start
    print(f"config {config_digest(cfg)}  {cfg.iterations} samples -> {args.out}  ({elapsed:.2f}s)")
    return EXIT_OK


def cmd_analyze(args) -> int:
    log = files.read_samples(args.samples)
    meta = files.read_meta(args.samples) or {}
    seed = args.seed if args.seed is not None else meta.get("seed", 0)
    result = analyze(log, reps=args.reps, seed=seed, max_bins=args.max_bins)
    summary = _summary({**meta, "seed": seed}, len(log), result)

    matrix = build_matrix(log, args.max_bins)
    matrix_out = args.matrix or Path(args.samples).with_suffix(".matrix.csv")
    files.write_matrix_csv(matrix_out, matrix)
    if args.heatmap:
        files.write_heatmap_pgm(args.heatmap, matrix)

    text = json.dumps(summary, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _threads() -> int:
    raw = os.environ.get("TEMPUS_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise UsageError(f"TEMPUS_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def derive_seed(seed: int, channel: Channel, defence: Defence) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(channel.value, defence.value))
    return int(ss.generate_state(1, np.uint64)[0])


def sweep_rows(base: ExperimentConfig, channels, defences, reps: int, threads: int = 1) -> list[dict]:
    cells = [(c, d) for c in channels for d in defences]

    def one(cell):
        channel, defence = cell
        cfg = dataclasses.replace(
            base, channel=channel, defence=defence, seed=derive_seed(base.seed, channel, defence)
        )
        result = analyze(run_experiment(cfg), reps=reps, seed=cfg.seed)
        return _summary(config_dict(cfg), cfg.iterations, result)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(one, cells))
    order = {d: i for i, d in enumerate(DEFENCES)}
    return sorted(rows, key=lambda r: (CHANNELS[r["channel"]].value, order[r["defence"]]))


def cmd_sweep(args) -> int:
    conf = _load_config(args.config, _SWEEP_KEYS)
    base = _experiment(args, conf, channel=Channel.L1D, defence=Defence.NONE)
    channel_names = args.channels.split(",") if args.channels else conf.get("channels", list(CHANNELS))
    defence_names = args.defences.split(",") if args.defences else conf.get("defences", list(SWEEP_DEFENCES))
    channels = [_pick("channel", CHANNELS, c) for c in channel_names]
    defences = [_pick("defence", DEFENCES, d) for d in defence_names]

    rows = sweep_rows(base, channels, defences, args.reps, _threads())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_KEYS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_cost(args) -> int:
    conf = _load_config(args.config, _EXPERIMENT_KEYS)
    try:
        core = CoreConfig(**conf.get("core", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    report = costmod.switch_report(core, base_cold=args.base_cold, base_hot=args.base_hot)
    if args.json:
        print(json.dumps(report.as_dict(), indent=2))
        return EXIT_OK
    print("fence.t flush latency (cycles)")
    for name, cycles in report.per_component.items():
        print(f"  {name:<12}{cycles:>8}")
    print(f"  {'total':<12}{report.fence_total:>8}")
    print()
    print("context switch (cycles)")
    print(f"  {'hot':<12}{report.switch_hot:>8}")
    print(f"  {'cold':<12}{report.switch_cold:>8}")
    print(f"  {'prime x2':<12}{report.switch_prime2:>8}")
    print(f"  {'fence.t':<12}{report.switch_fence:>8}")
    return EXIT_OK


def parse_mask(text: str) -> int:
    """``full``, ``first-order``, an integer literal, or component names joined by ``+``."""
    key = text.strip().lower()
    if key == "full":
        return int(FULL)
    if key in ("first-order", "first"):
        return int(FIRST_ORDER)
    try:
        mask = int(key, 0)
    except ValueError:
        mask = 0
        for part in key.split("+"):
            try:
                mask |= Flush[part.strip().upper()]
            except KeyError:
                raise UsageError(f"bad mask {text!r}") from None
    if not 0 <= mask < 1 << 20:
        raise UsageError(f"mask {text!r} does not fit in 20 bits")
    return mask


def cmd_encode(args) -> int:
    print(f"0x{encode_fence_t(parse_mask(args.mask)):08X}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_experiment_flags(p, with_channel=True):
    if with_channel:
        p.add_argument("--channel", choices=list(CHANNELS))
        p.add_argument("--defence", choices=list(DEFENCES))
    p.add_argument("--n", type=int, help="iterations (samples)")
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-events", dest="noise_events", type=int)
    p.add_argument("--noise-cycles", dest="noise_cycles", type=int)
    p.add_argument("--config", help="JSON file with ExperimentConfig/CoreConfig fields")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tempus", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one prime-and-probe experiment")
    _add_experiment_flags(p)
    p.add_argument("--out", default="samples.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="mutual information and channel matrix of a samples file")
    p.add_argument("samples")
    p.add_argument("--out", help="summary JSON (default: stdout)")
    p.add_argument("--matrix", help="channel-matrix CSV (default: <samples>.matrix.csv)")
    p.add_argument("--heatmap", help="write the channel matrix as an 8-bit PGM")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-bins", dest="max_bins", type=int, default=DEFAULT_MAX_BINS)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="all channels under several defences")
    _add_experiment_flags(p, with_channel=False)
    p.add_argument("--channels", help="comma-separated (default: all)")
    p.add_argument("--defences", help=f"comma-separated (default: {','.join(SWEEP_DEFENCES)})")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--out", help="summary table CSV (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cost", help="fence.t latency and context-switch cost table")
    p.add_argument("--config")
    p.add_argument("--base-cold", dest="base_cold", type=int, default=costmod.BASE_COLD)
    p.add_argument("--base-hot", dest="base_hot", type=int, default=costmod.BASE_HOT)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("encode", help="32-bit fence.t instruction word for a flush mask")
    p.add_argument("--mask", required=True)
    p.set_defaults(func=cmd_encode)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tempus: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except files.MalformedFile as exc:
        print(f"tempus: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"tempus: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
