"""Prime-and-probe covert-channel experiments across simulated partition switches.

Each iteration the spy primes one resource, the OS switches to the Trojan,
the Trojan encodes a random secret into that resource, the OS switches back
and the spy probes, recording its total probe latency.  The configured
defence runs on both switches.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, NamedTuple

import numpy as np

from tempus.uarch import (
    FIRST_ORDER,
    FULL,
    CoreConfig,
    MicroarchState,
    Requester,
    branch_cond,
    branch_indirect,
    data_access,
    fence_t,
    inst_fetch,
    reset_state,
    tlb_access,
)

# Disjoint address regions; each is aligned to a whole cache way and page.
SPY_BASE = 0x0010_0000
TROJAN_BASE = 0x0020_0000
OS_BASE = 0x0030_0000
SPY_TARGETS = 0x0040_0000
TROJAN_TARGETS = 0x0050_0000

#: Sets that get one line beyond capacity in the spy's L1 buffers.
EXTRA_SETS = 32
#: Pages beyond TLB capacity in the spy's TLB buffer.
EXTRA_PAGES = 1
#: Bernoulli probability of each jitter event.
NOISE_P = 0.5


class Channel(Enum):
    L1D = 0
    L1I = 1
    TLB = 2
    BTB = 3
    BHT = 4

    def secret_range(self, core: CoreConfig) -> int:
        """Largest secret ``n``; valid secrets are ``0..n`` inclusive."""
        return {
            Channel.L1D: core.l1d_sets,
            Channel.L1I: core.l1i_sets,
            Channel.TLB: core.tlb_entries,
            Channel.BTB: core.btb_entries,
            Channel.BHT: core.bht_entries,
        }[self]


class Defence(Enum):
    NONE = 0
    PRIME_ONCE = 1
    PRIME_TWICE = 2
    FENCE_FIRST_ORDER = 3
    FENCE_FULL = 4


@dataclass(frozen=True)
class ExperimentConfig:
    channel: Channel
    defence: Defence = Defence.NONE
    iterations: int = 100_000
    seed: int = 0
    noise_events: int = 4
    noise_cycles: int = 3
    core: CoreConfig = field(default_factory=CoreConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.noise_events < 0 or self.noise_cycles < 0:
            raise ValueError("noise parameters must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


class Sample(NamedTuple):
    s: int
    t: int


@dataclass
class TraceLog:
    """Secrets and recorded probe latencies of one experiment, in iteration order."""

    config: ExperimentConfig | None
    secrets: np.ndarray
    latencies: np.ndarray

    def __post_init__(self):
        self.secrets = np.asarray(self.secrets, dtype=np.int64)
        self.latencies = np.asarray(self.latencies, dtype=np.int64)
        if self.secrets.shape != self.latencies.shape or self.secrets.ndim != 1:
            raise ValueError("secrets and latencies must be 1-d arrays of equal length")

    def __len__(self) -> int:
        return len(self.secrets)

    def __iter__(self) -> Iterator[Sample]:
        for s, t in zip(self.secrets.tolist(), self.latencies.tolist()):
            yield Sample(s, t)

    @classmethod
    def from_samples(cls, samples, config: ExperimentConfig | None = None) -> TraceLog:
        pairs = list(samples)
        return cls(config, [p[0] for p in pairs], [p[1] for p in pairs])


# ---------------------------------------------------------------------------
# Address streams


def _l1_buffer(core: CoreConfig, sets: int, ways: int) -> range:
    return range(SPY_BASE, SPY_BASE + (sets * ways + min(EXTRA_SETS, sets)) * core.line_bytes,
                 core.line_bytes)


def _spy_pages(core: CoreConfig, count: int) -> range:
    return range(SPY_BASE, SPY_BASE + count * core.page_bytes, core.page_bytes)


def _l1_touch(core: CoreConfig, sets: int, ways: int, s: int) -> Iterator[int]:
    # all ways of the first s sets, one set at a time
    for j in range(s):
        for w in range(ways):
            yield TROJAN_BASE + (w * sets + j) * core.line_bytes


# ---------------------------------------------------------------------------
# Attack phases


def prime(channel: Channel, state: MicroarchState, core: CoreConfig) -> int:
    total = 0
    if channel is Channel.L1D:
        for addr in _l1_buffer(core, core.l1d_sets, core.l1d_ways):
            total += data_access(state, core, addr, Requester.LOAD)[0]
    elif channel is Channel.L1I:
        for addr in _l1_buffer(core, core.l1i_sets, core.l1i_ways):
            total += inst_fetch(state, core, addr)[0]
    elif channel is Channel.TLB:
        for addr in _spy_pages(core, core.tlb_entries):
            total += tlb_access(state, core, addr)[0]
    elif channel is Channel.BTB:
        for k in range(core.btb_entries):
            total += branch_indirect(state, core, SPY_BASE + 4 * k, SPY_TARGETS + 64 * k)
    elif channel is Channel.BHT:
        # three not-taken executions saturate any counter down to 0
        for _ in range(3):
            for k in range(core.bht_entries):
                total += branch_cond(state, core, SPY_BASE + 4 * k, False)
    return total


def trojan_encode(channel: Channel, state: MicroarchState, core: CoreConfig, s: int) -> None:
    n = channel.secret_range(core)
    if not 0 <= s <= n:
        raise ValueError(f"secret {s} outside [0, {n}] for {channel.name}")
    if channel is Channel.L1D:
        for addr in _l1_touch(core, core.l1d_sets, core.l1d_ways, s):
            data_access(state, core, addr, Requester.STORE)
    elif channel is Channel.L1I:
        for addr in _l1_touch(core, core.l1i_sets, core.l1i_ways, s):
            inst_fetch(state, core, addr)
    elif channel is Channel.TLB:
        for k in range(s):
            tlb_access(state, core, TROJAN_BASE + k * core.page_bytes)
    elif channel is Channel.BTB:
        for k in range(s):
            branch_indirect(state, core, TROJAN_BASE + 4 * k, TROJAN_TARGETS + 64 * k)
    elif channel is Channel.BHT:
        for k in range(s):
            branch_cond(state, core, TROJAN_BASE + 4 * k, True)
            branch_cond(state, core, TROJAN_BASE + 4 * k, True)


def spy_probe(channel: Channel, state: MicroarchState, core: CoreConfig) -> int:
    total = 0
    if channel is Channel.L1D:
        buf = _l1_buffer(core, core.l1d_sets, core.l1d_ways)
        for _ in range(2):
            for addr in buf:
                total += data_access(state, core, addr, Requester.LOAD)[0]
    elif channel is Channel.L1I:
        buf = _l1_buffer(core, core.l1i_sets, core.l1i_ways)
        for _ in range(2):
            for addr in buf:
                total += inst_fetch(state, core, addr)[0]
    elif channel is Channel.TLB:
        pages = _spy_pages(core, core.tlb_entries + EXTRA_PAGES)
        for _ in range(2):
            for addr in pages:
                total += tlb_access(state, core, addr)[0]
    elif channel is Channel.BTB:
        for k in range(core.btb_entries):
            total += branch_indirect(state, core, SPY_BASE + 4 * k, SPY_TARGETS + 64 * k)
    elif channel is Channel.BHT:
        for k in range(core.bht_entries):
            total += branch_cond(state, core, SPY_BASE + 4 * k, False)
    return total


def os_prime(state: MicroarchState, core: CoreConfig, passes: int) -> int:
    """Traverse an OS-private buffer the size of the L1-D ``passes`` times."""
    total = 0
    lines = core.l1d_sets * core.l1d_ways
    for _ in range(passes):
        for k in range(lines):
            total += data_access(state, core, OS_BASE + k * core.line_bytes, Requester.LOAD)[0]
    return total


def os_switch(defence: Defence, state: MicroarchState, core: CoreConfig) -> int:
    if defence is Defence.NONE:
        return 0
    if defence is Defence.PRIME_ONCE:
        return os_prime(state, core, 1)
    if defence is Defence.PRIME_TWICE:
        return os_prime(state, core, 2)
    if defence is Defence.FENCE_FIRST_ORDER:
        return fence_t(state, core, FIRST_ORDER)
    return fence_t(state, core, FULL)


# ---------------------------------------------------------------------------
# Experiment loop


def run_iterations_py(
    state: MicroarchState, core: CoreConfig, channel: int, defence: int, secrets
) -> np.ndarray:
    """Reference loop: one prime/switch/encode/switch/probe round per secret.

    Returns the raw (noise-free) probe latencies.
    """
    ch = Channel(channel)
    de = Defence(defence)
    out = np.empty(len(secrets), dtype=np.int64)
    for i, s in enumerate(secrets):
        prime(ch, state, core)
        os_switch(de, state, core)
        trojan_encode(ch, state, core, int(s))
        os_switch(de, state, core)
        out[i] = spy_probe(ch, state, core)
    return out


def draw_inputs(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Secrets and jitter for ``cfg`` from its seeded generator."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.channel.secret_range(cfg.core)
    secrets = rng.integers(0, n + 1, size=cfg.iterations, dtype=np.int64)
    jitter = rng.binomial(cfg.noise_events, NOISE_P, size=cfg.iterations).astype(np.int64)
    return secrets, jitter * cfg.noise_cycles


def run_experiment(cfg: ExperimentConfig, backend: str | None = None) -> TraceLog:
    secrets, jitter = draw_inputs(cfg)
    state = reset_state(cfg.core)
    run = _BACKENDS[backend or BACKEND]
    raw = run(state, cfg.core, cfg.channel.value, cfg.defence.value, secrets)
    return TraceLog(cfg, secrets, raw + jitter)


_BACKENDS = {"python": run_iterations_py}
try:
    from tempus._kernel import run_iterations as _run_iterations_c
except ImportError:  # pragma: no cover - depends on build
    _run_iterations_c = None
else:
    _BACKENDS["cython"] = _run_iterations_c

if _run_iterations_c is not None and os.environ.get("TEMPUS_BACKEND", "") != "python":
    BACKEND = "cython"
else:
    BACKEND = "python"
