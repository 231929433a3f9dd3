"""State machines for the history-dependent on-core resources of a small in-order core.

Every stateful resource the timing channels go through lives in
:class:`MicroarchState`: two set-associative L1 caches with LFSR victim
selection, a fully associative TLB with tree pseudo-LRU, a BHT of 2-bit
counters, a direct-mapped BTB, the round-robin arbiter in front of the L1-D
and a pipeline flag.  All operations mutate the state they are given in
place and return the cycle latency they add.
"""

from __future__ import annotations

import copy
from array import array
from dataclasses import dataclass, field
from enum import IntEnum, IntFlag


class MalformedInstruction(ValueError):
    """Raised when a 32-bit word is not a valid ``fence.t`` encoding."""


class ReservedBitsError(ValueError):
    """Raised when a flush mask selects reserved components."""


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class CoreConfig:
    l1d_size_bytes: int = 32768
    l1d_ways: int = 8
    l1i_size_bytes: int = 16384
    l1i_ways: int = 4
    line_bytes: int = 16
    tlb_entries: int = 16
    bht_entries: int = 64
    btb_entries: int = 16
    page_bytes: int = 4096
    t_hit: int = 1
    t_miss: int = 12
    tlb_miss_penalty: int = 20
    mispredict_penalty: int = 5
    pipeline_refill: int = 64

    def __post_init__(self):
        for name in (
            "l1d_size_bytes", "l1d_ways", "l1i_size_bytes", "l1i_ways", "line_bytes",
            "tlb_entries", "bht_entries", "btb_entries", "page_bytes",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or not _is_pow2(value):
                raise ValueError(f"{name} must be a positive power of two, got {value!r}")
        if self.l1d_sets < 1 or self.l1i_sets < 1:
            raise ValueError("cache geometry yields zero sets")
        if self.t_hit < 0 or self.t_miss <= self.t_hit:
            raise ValueError("need 0 <= t_hit < t_miss")
        for name in ("tlb_miss_penalty", "mispredict_penalty", "pipeline_refill"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def l1d_sets(self) -> int:
        return self.l1d_size_bytes // (self.l1d_ways * self.line_bytes)

    @property
    def l1i_sets(self) -> int:
        return self.l1i_size_bytes // (self.l1i_ways * self.line_bytes)


# ---------------------------------------------------------------------------
# LFSR

#: Fibonacci taps for x^8 + x^6 + x^5 + x^4 + 1 (state bits 7, 5, 4, 3).
LFSR_TAPS = 0xB8
LFSR_RESET = 0


def lfsr_step(state: int) -> int:
    """Advance the 8-bit victim-selection register by one step.

    A maximal-length LFSR shifted left, with the feedback bit inverted
    whenever the seven low bits are zero.  That splices the all-zero state
    into the cycle, so every state lies on a single cycle of length 256.
    The returned successor is also the pseudo-random value drawn.
    """
    fb = bin(state & LFSR_TAPS).count("1") & 1
    if state & 0x7F == 0:
        fb ^= 1
    return ((state << 1) | fb) & 0xFF


# ---------------------------------------------------------------------------
# Tree pseudo-LRU, stored as an int of (leaves - 1) node flags in heap order


def plru_touch(tree: int, way: int, leaves: int = 16) -> int:
    if not 0 <= way < leaves:
        raise ValueError(f"way {way} out of range for {leaves} leaves")
    node = way + leaves - 1
    while node:
        parent = (node - 1) >> 1
        if node == 2 * parent + 1:
            tree |= 1 << parent  # touched on the left, point right
        else:
            tree &= ~(1 << parent)
        node = parent
    return tree


def plru_victim(tree: int, leaves: int = 16) -> int:
    node = 0
    while node < leaves - 1:
        node = 2 * node + 1 + ((tree >> node) & 1)
    return node - (leaves - 1)


# ---------------------------------------------------------------------------
# Components


class Requester(IntEnum):
    LOAD = 0
    STORE = 1
    MMU = 2


@dataclass
class SetAssocCache:
    """Write-through set-associative cache; ``valid`` and ``tag`` are flat ``[set * ways + way]``."""

    sets: int
    ways: int
    valid: bytearray = field(init=False)
    tag: array = field(init=False)
    lfsr: int = LFSR_RESET

    def __post_init__(self):
        self.valid = bytearray(self.sets * self.ways)
        self.tag = array("q", bytes(8 * self.sets * self.ways))

    def access(self, set_idx: int, tag: int) -> bool:
        """Look up ``tag`` in ``set_idx``; on a miss, allocate a way. Returns hit."""
        base = set_idx * self.ways
        valid = self.valid
        tags = self.tag
        free = -1
        for w in range(base, base + self.ways):
            if valid[w]:
                if tags[w] == tag:
                    return True
            elif free < 0:
                free = w
        # the register advances on every line fill, not only on evictions
        self.lfsr = lfsr_step(self.lfsr)
        if free < 0:
            free = base + self.lfsr % self.ways
        valid[free] = 1
        tags[free] = tag
        return False

    def holds(self, set_idx: int, tag: int) -> bool:
        base = set_idx * self.ways
        return any(
            self.valid[w] and self.tag[w] == tag for w in range(base, base + self.ways)
        )

    def invalidate(self):
        # payload is zeroed too so a flushed cache compares equal to a fresh one
        self.valid[:] = bytes(len(self.valid))
        self.tag[:] = array("q", bytes(8 * len(self.tag)))


@dataclass
class Tlb:
    entries: int = 16
    valid: bytearray = field(init=False)
    vpn: array = field(init=False)
    plru: int = 0

    def __post_init__(self):
        self.valid = bytearray(self.entries)
        self.vpn = array("q", bytes(8 * self.entries))

    def access(self, vpn: int) -> bool:
        free = -1
        for i in range(self.entries):
            if self.valid[i]:
                if self.vpn[i] == vpn:
                    self.plru = plru_touch(self.plru, i, self.entries)
                    return True
            elif free < 0:
                free = i
        if free < 0:
            free = plru_victim(self.plru, self.entries)
        self.valid[free] = 1
        self.vpn[free] = vpn
        self.plru = plru_touch(self.plru, free, self.entries)
        return False


@dataclass
class Bht:
    entries: int = 64
    counters: bytearray = field(init=False)

    def __post_init__(self):
        self.counters = bytearray(self.entries)


@dataclass
class Btb:
    entries: int = 16
    valid: bytearray = field(init=False)
    tag: array = field(init=False)
    target: array = field(init=False)

    def __post_init__(self):
        self.valid = bytearray(self.entries)
        self.tag = array("q", bytes(8 * self.entries))
        self.target = array("q", bytes(8 * self.entries))


@dataclass
class RrArbiter:
    """Round-robin arbiter over the three L1-D requesters."""

    pointer: int = 0

    def grant(self, requester: int) -> int:
        wait = (requester - self.pointer) % 3
        self.pointer = (requester + 1) % 3
        return wait


@dataclass
class MicroarchState:
    l1d: SetAssocCache
    l1i: SetAssocCache
    tlb: Tlb
    bht: Bht
    btb: Btb
    arbiter: RrArbiter = field(default_factory=RrArbiter)
    pipeline_dirty: bool = False

    def copy(self) -> MicroarchState:
        return copy.deepcopy(self)


def reset_state(core: CoreConfig | None = None) -> MicroarchState:
    core = core or CoreConfig()
    return MicroarchState(
        l1d=SetAssocCache(core.l1d_sets, core.l1d_ways),
        l1i=SetAssocCache(core.l1i_sets, core.l1i_ways),
        tlb=Tlb(core.tlb_entries),
        bht=Bht(core.bht_entries),
        btb=Btb(core.btb_entries),
    )


# ---------------------------------------------------------------------------
# Timed operations


def data_access(
    state: MicroarchState, core: CoreConfig, paddr: int, requester: int = Requester.LOAD
) -> tuple[int, bool]:
    wait = state.arbiter.grant(requester)
    line = paddr // core.line_bytes
    sets = state.l1d.sets
    hit = state.l1d.access(line % sets, line // sets)
    state.pipeline_dirty = True
    return (core.t_hit if hit else core.t_miss) + wait, hit


def inst_fetch(state: MicroarchState, core: CoreConfig, paddr: int) -> tuple[int, bool]:
    line = paddr // core.line_bytes
    sets = state.l1i.sets
    hit = state.l1i.access(line % sets, line // sets)
    state.pipeline_dirty = True
    return (core.t_hit if hit else core.t_miss), hit


def tlb_access(state: MicroarchState, core: CoreConfig, vaddr: int) -> tuple[int, bool]:
    hit = state.tlb.access(vaddr // core.page_bytes)
    state.pipeline_dirty = True
    return (0 if hit else core.tlb_miss_penalty), hit


def branch_cond(state: MicroarchState, core: CoreConfig, pc: int, taken: bool) -> int:
    counters = state.bht.counters
    idx = (pc // 4) % state.bht.entries
    c = counters[idx]
    latency = core.mispredict_penalty if (c >= 2) != bool(taken) else 0
    if taken:
        counters[idx] = min(c + 1, 3)
    else:
        counters[idx] = max(c - 1, 0)
    state.pipeline_dirty = True
    return latency


def branch_indirect(state: MicroarchState, core: CoreConfig, pc: int, target: int) -> int:
    btb = state.btb
    idx = (pc // 4) % btb.entries
    tag = (pc // 4) // btb.entries
    predicted = btb.valid[idx] and btb.tag[idx] == tag and btb.target[idx] == target
    btb.valid[idx] = 1
    btb.tag[idx] = tag
    btb.target[idx] = target
    state.pipeline_dirty = True
    return 0 if predicted else core.mispredict_penalty


# ---------------------------------------------------------------------------
# Temporal fence


class Flush(IntFlag):
    """Component-select bits of the ``fence.t`` immediate."""

    L1D_VALID = 1 << 0
    L1I_VALID = 1 << 1
    TLB_VALID = 1 << 2
    BHT = 1 << 3
    BTB = 1 << 4
    L1D_LFSR = 1 << 5
    L1I_LFSR = 1 << 6
    TLB_PLRU = 1 << 7
    ARBITER = 1 << 8
    PIPELINE = 1 << 9


FIRST_ORDER = (
    Flush.L1D_VALID | Flush.L1I_VALID | Flush.TLB_VALID | Flush.BHT | Flush.BTB | Flush.PIPELINE
)
FULL = Flush((1 << 10) - 1)
SELECT_BITS = 20
RESERVED = ((1 << SELECT_BITS) - 1) & ~int(FULL)

_SINGLE_CYCLE = (
    Flush.TLB_VALID | Flush.BHT | Flush.BTB | Flush.L1D_LFSR | Flush.L1I_LFSR
    | Flush.TLB_PLRU | Flush.ARBITER
)


def check_mask(mask: int) -> int:
    mask = int(mask)
    if mask < 0 or mask >> SELECT_BITS:
        raise ReservedBitsError(f"flush mask {mask:#x} does not fit in {SELECT_BITS} bits")
    if mask & RESERVED:
        raise ReservedBitsError(f"flush mask {mask:#x} sets reserved bits {mask & RESERVED:#x}")
    return mask


def flush_cost(core: CoreConfig, mask: int) -> int:
    """Cycles taken by ``fence.t`` with ``mask``.

    Cache tag arrays invalidate one set per cycle, in parallel with each
    other; everything else except the pipeline clears in one cycle.
    """
    mask = check_mask(mask)
    cycles = 0
    if mask & Flush.L1D_VALID:
        cycles = core.l1d_sets
    if mask & Flush.L1I_VALID:
        cycles = max(cycles, core.l1i_sets)
    if mask & _SINGLE_CYCLE:
        cycles += 1
    if mask & Flush.PIPELINE:
        cycles += core.pipeline_refill
    return cycles


def fence_t(state: MicroarchState, core: CoreConfig, mask: int) -> int:
    """Reset the components selected by ``mask`` in place; returns the cycle cost."""
    mask = check_mask(mask)
    if mask & Flush.L1D_VALID:
        state.l1d.invalidate()
    if mask & Flush.L1I_VALID:
        state.l1i.invalidate()
    if mask & Flush.TLB_VALID:
        state.tlb.valid[:] = bytes(state.tlb.entries)
        state.tlb.vpn[:] = array("q", bytes(8 * state.tlb.entries))
    if mask & Flush.BHT:
        state.bht.counters[:] = bytes(state.bht.entries)
    if mask & Flush.BTB:
        state.btb.valid[:] = bytes(state.btb.entries)
        state.btb.tag[:] = array("q", bytes(8 * state.btb.entries))
        state.btb.target[:] = array("q", bytes(8 * state.btb.entries))
    if mask & Flush.L1D_LFSR:
        state.l1d.lfsr = LFSR_RESET
    if mask & Flush.L1I_LFSR:
        state.l1i.lfsr = LFSR_RESET
    if mask & Flush.TLB_PLRU:
        state.tlb.plru = 0
    if mask & Flush.ARBITER:
        state.arbiter.pointer = 0
    if mask & Flush.PIPELINE:
        state.pipeline_dirty = False
    return flush_cost(core, mask)


# ---------------------------------------------------------------------------
# Instruction encoding: select[19:0] | rd=00000 | opcode custom-0

OPCODE_CUSTOM0 = 0b0001011


def encode_fence_t(mask: int) -> int:
    mask = int(mask)
    if mask < 0 or mask >> SELECT_BITS:
        raise ValueError(f"select field {mask:#x} does not fit in {SELECT_BITS} bits")
    return (mask << 12) | OPCODE_CUSTOM0


def decode_fence_t(word: int) -> int:
    if word < 0 or word >> 32:
        raise MalformedInstruction(f"{word:#x} is not a 32-bit word")
    if word & 0x7F != OPCODE_CUSTOM0:
        raise MalformedInstruction(f"opcode {word & 0x7F:#09b} is not custom-0")
    if (word >> 7) & 0x1F:
        raise MalformedInstruction(f"rd field of {word:#010x} must be zero")
    return word >> 12
