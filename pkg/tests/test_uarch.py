import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempus.uarch import (
    FIRST_ORDER,
    FULL,
    LFSR_RESET,
    CoreConfig,
    Flush,
    MalformedInstruction,
    Requester,
    ReservedBitsError,
    branch_cond,
    branch_indirect,
    data_access,
    decode_fence_t,
    encode_fence_t,
    fence_t,
    flush_cost,
    inst_fetch,
    lfsr_step,
    plru_touch,
    plru_victim,
    reset_state,
    tlb_access,
)


# --- config ---------------------------------------------------------------


def test_default_geometry(core):
    assert core.l1d_sets == 256
    assert core.l1i_sets == 256


@pytest.mark.parametrize(
    "kw",
    [
        {"l1d_ways": 3},
        {"line_bytes": 24},
        {"t_miss": 1},
        {"mispredict_penalty": 0},
        {"pipeline_refill": -1},
        {"l1d_size_bytes": 64, "l1d_ways": 8},
    ],
)
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        CoreConfig(**kw)


# --- LFSR -----------------------------------------------------------------


def _lfsr_orbit(start):
    seen, s = [], start
    for _ in range(256):
        s = lfsr_step(s)
        seen.append(s)
    return seen


def test_lfsr_period_from_0x01():
    orbit = _lfsr_orbit(0x01)
    assert orbit[-1] == 0x01
    assert len(set(orbit)) == 256


def test_lfsr_full_cycle_every_start():
    for start in range(256):
        orbit = _lfsr_orbit(start)
        assert orbit[-1] == start
        assert len(set(orbit)) == 256
        assert lfsr_step(start) != start


def test_lfsr_victims_uniform_over_period():
    residues = [v % 8 for v in _lfsr_orbit(LFSR_RESET)]
    assert all(residues.count(r) == 32 for r in range(8))


# --- pLRU -----------------------------------------------------------------


def _plru_oracle_victim(bits, leaves=16):
    # independent walk over an explicit list of node flags
    lo, hi, node = 0, leaves, 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bits[node]:
            lo, node = mid, 2 * node + 2
        else:
            hi, node = mid, 2 * node + 1
    return lo


def test_plru_examples():
    assert plru_victim(0) == 0
    assert plru_victim(plru_touch(0, 0)) == 8
    t = 0
    for w in range(16):
        t = plru_touch(t, w)
    assert plru_victim(t) == 0


def test_plru_matches_oracle():
    rng = random.Random(3)
    for _ in range(2000):
        tree = rng.getrandbits(15)
        bits = [(tree >> i) & 1 for i in range(15)]
        assert plru_victim(tree) == _plru_oracle_victim(bits)


def test_plru_safety_exhaustive():
    for way in range(16):
        for tree in range(1 << 15):
            assert plru_victim(plru_touch(tree, way)) != way


def test_plru_out_of_range():
    with pytest.raises(ValueError):
        plru_touch(0, 16)
    with pytest.raises(ValueError):
        plru_touch(0, -1)


# --- caches and arbiter ---------------------------------------------------


def test_data_access_cold_then_repeat(core):
    st_ = reset_state(core)
    assert data_access(st_, core, 0x1234) == (core.t_miss, False)
    assert data_access(st_, core, 0x1234) == (core.t_hit + 2, True)


def test_data_access_address_split(core):
    st_ = reset_state(core)
    addr = 0x12345
    data_access(st_, core, addr)
    line = addr // core.line_bytes
    assert st_.l1d.holds(line % 256, line // 256)
    # same line, different byte offset
    assert data_access(st_, core, addr & ~0xF, Requester.MMU)[1]


def test_arbiter_wait_table(core):
    for ptr in range(3):
        for req in Requester:
            st_ = reset_state(core)
            st_.arbiter.pointer = ptr
            lat, _ = data_access(st_, core, 0, req)
            wait = lat - core.t_miss
            assert wait == (req - ptr) % 3
            assert st_.arbiter.pointer == (req + 1) % 3


def test_prime_full_l1d_no_self_eviction(core):
    st_ = reset_state(core)
    lines = [k * core.line_bytes for k in range(256 * 8)]
    for a in lines:
        data_access(st_, core, a)
    assert all(data_access(st_, core, a)[1] for a in lines)


def test_inst_fetch(core):
    st_ = reset_state(core)
    assert inst_fetch(st_, core, 0x40) == (core.t_miss, False)
    assert inst_fetch(st_, core, 0x40) == (core.t_hit, True)
    st_ = reset_state(core)
    lines = [k * core.line_bytes for k in range(256 * 4)]
    for a in lines:
        inst_fetch(st_, core, a)
    assert all(inst_fetch(st_, core, a)[1] for a in lines)


def test_cache_lfsr_steps_per_fill(core):
    st_ = reset_state(core)
    data_access(st_, core, 0)
    assert st_.l1d.lfsr == lfsr_step(LFSR_RESET)
    data_access(st_, core, 0)  # hit: no step
    assert st_.l1d.lfsr == lfsr_step(LFSR_RESET)


def test_cache_eviction_uses_lfsr(core):
    st_ = reset_state(core)
    stride = 256 * core.line_bytes
    for w in range(8):
        data_access(st_, core, w * stride)
    lfsr_before = st_.l1d.lfsr
    data_access(st_, core, 8 * stride)
    victim = lfsr_step(lfsr_before) % 8
    assert st_.l1d.tag[victim] == 8


def test_tlb(core):
    st_ = reset_state(core)
    assert tlb_access(st_, core, 0x5000) == (core.tlb_miss_penalty, False)
    assert tlb_access(st_, core, 0x5FFF) == (0, True)
    st_ = reset_state(core)
    pages = [k * core.page_bytes for k in range(17)]
    for p in pages:
        tlb_access(st_, core, p)
    misses = sum(not tlb_access(st_, core, p)[1] for p in pages)
    assert misses >= 1


def test_bht(core):
    st_ = reset_state(core)
    assert branch_cond(st_, core, 0x100, False) == 0
    assert st_.bht.counters[0x40 % 64] == 0
    lats = [branch_cond(st_, core, 0x100, True) for _ in range(4)]
    assert lats == [core.mispredict_penalty, core.mispredict_penalty, 0, 0]
    assert st_.bht.counters[0x40 % 64] == 3


def test_btb(core):
    st_ = reset_state(core)
    assert branch_indirect(st_, core, 0x100, 0x9000) == core.mispredict_penalty
    assert branch_indirect(st_, core, 0x100, 0x9000) == 0
    assert branch_indirect(st_, core, 0x100, 0xA000) == core.mispredict_penalty
    alias = 0x100 + 4 * core.btb_entries
    st_ = reset_state(core)
    lats = [branch_indirect(st_, core, pc, 0x9000) for pc in [0x100, alias] * 5]
    assert all(lat == core.mispredict_penalty for lat in lats)


# --- fence.t --------------------------------------------------------------


def test_reset_state(core):
    st_ = reset_state(core)
    assert not any(st_.l1d.valid) and not any(st_.l1i.valid)
    assert st_.arbiter.pointer == 0
    assert fence_t(st_.copy(), core, FULL) == 321
    other = st_.copy()
    fence_t(other, core, FULL)
    assert other == st_


def test_fence_costs(core):
    assert flush_cost(core, FULL) == 321
    assert flush_cost(core, 0) == 0
    assert flush_cost(core, Flush.L1D_VALID) == 256
    assert flush_cost(core, Flush.L1D_LFSR | Flush.ARBITER | Flush.TLB_PLRU) == 1
    assert flush_cost(core, FIRST_ORDER) == 321


def test_fence_empty_mask_noop(core):
    st_ = reset_state(core)
    for k in range(50):
        data_access(st_, core, k * 16)
    before = st_.copy()
    assert fence_t(st_, core, 0) == 0
    assert st_ == before


def test_fence_rejects_reserved(core):
    st_ = reset_state(core)
    with pytest.raises(ReservedBitsError):
        fence_t(st_, core, 1 << 10)
    with pytest.raises(ReservedBitsError):
        flush_cost(core, 0xFFFFF)


def _random_trace(state, core, ops):
    for op, addr, flag in ops:
        if op == 0:
            data_access(state, core, addr, Requester(flag % 3))
        elif op == 1:
            inst_fetch(state, core, addr)
        elif op == 2:
            tlb_access(state, core, addr)
        elif op == 3:
            branch_cond(state, core, addr & ~3, bool(flag & 1))
        else:
            branch_indirect(state, core, addr & ~3, addr ^ (flag << 6))


_ops = st.lists(
    st.tuples(st.integers(0, 4), st.integers(0, 1 << 24), st.integers(0, 7)), max_size=300
)


@settings(max_examples=1000, deadline=None)
@given(_ops)
def test_full_fence_equals_reset(ops):
    core = CoreConfig()
    state = reset_state(core)
    _random_trace(state, core, ops)
    fence_t(state, core, FULL)
    assert state == reset_state(core)


@settings(max_examples=100, deadline=None)
@given(_ops, st.sampled_from([Flush.L1D_LFSR, Flush.ARBITER, Flush.TLB_PLRU, Flush.L1I_LFSR]))
def test_submask_leaves_state(ops, missing):
    # dropping one secondary component leaves it as the trace left it
    core = CoreConfig()
    state = reset_state(core)
    _random_trace(state, core, ops)
    snapshot = state.copy()
    fence_t(state, core, FULL & ~missing)
    kept = {
        Flush.L1D_LFSR: lambda s: s.l1d.lfsr,
        Flush.L1I_LFSR: lambda s: s.l1i.lfsr,
        Flush.TLB_PLRU: lambda s: s.tlb.plru,
        Flush.ARBITER: lambda s: s.arbiter.pointer,
    }[missing]
    assert kept(state) == kept(snapshot)


@settings(max_examples=200, deadline=None)
@given(_ops)
def test_state_invariants(ops):
    core = CoreConfig()
    state = reset_state(core)
    _random_trace(state, core, ops)
    c = state.l1d
    for s in range(c.sets):
        tags = [c.tag[s * c.ways + w] for w in range(c.ways) if c.valid[s * c.ways + w]]
        assert len(tags) == len(set(tags))
    vpns = [state.tlb.vpn[i] for i in range(16) if state.tlb.valid[i]]
    assert len(vpns) == len(set(vpns))
    assert all(0 <= x <= 3 for x in state.bht.counters)
    assert state.arbiter.pointer in (0, 1, 2)


@settings(max_examples=50, deadline=None)
@given(_ops)
def test_trace_determinism(ops):
    core = CoreConfig()
    a, b = reset_state(core), reset_state(core)
    _random_trace(a, core, ops)
    _random_trace(b, core, ops)
    assert a == b


@given(st.integers(0, FULL), st.integers(0, FULL))
def test_flush_cost_monotone_subadditive(m1, m2):
    core = CoreConfig()
    assert flush_cost(core, m1 | m2) >= flush_cost(core, m1)
    assert flush_cost(core, m1 | m2) <= flush_cost(core, m1) + flush_cost(core, m2)


# --- encoding -------------------------------------------------------------


def test_encode_examples():
    assert encode_fence_t(0) == 0x0000000B
    assert encode_fence_t(0xFFFFF) == 0xFFFFF00B
    assert encode_fence_t(FULL) == 0x003FF00B


@given(st.integers(0, (1 << 20) - 1))
def test_encode_round_trip(m):
    assert decode_fence_t(encode_fence_t(m)) == m


@pytest.mark.parametrize("word", [0x0000000C, 0x0000008B, 0x1_0000_000B, -1])
def test_decode_malformed(word):
    with pytest.raises(MalformedInstruction):
        decode_fence_t(word)


def test_encode_rejects_wide():
    with pytest.raises(ValueError):
        encode_fence_t(1 << 20)
