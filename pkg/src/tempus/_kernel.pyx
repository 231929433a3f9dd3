# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled experiment loop; must stay bit-identical to ``attack.run_iterations_py``."""

import numpy as np

from tempus.attack import (
    EXTRA_PAGES, EXTRA_SETS, OS_BASE, SPY_BASE, SPY_TARGETS, TROJAN_BASE, TROJAN_TARGETS,
)

ctypedef long long i64

cdef enum:
    CH_L1D = 0
    CH_L1I = 1
    CH_TLB = 2
    CH_BTB = 3
    CH_BHT = 4

cdef enum:
    DEF_NONE = 0
    DEF_PRIME1 = 1
    DEF_PRIME2 = 2
    DEF_FIRST = 3
    DEF_FULL = 4

cdef enum:
    REQ_LOAD = 0
    REQ_STORE = 1

cdef struct Cache:
    unsigned char* valid
    i64* tag
    int sets
    int ways
    int set_shift
    int lfsr

cdef struct Model:
    Cache l1d
    Cache l1i
    unsigned char* tlb_valid
    i64* tlb_vpn
    int tlb_n
    int plru
    unsigned char* bht
    int bht_n
    unsigned char* btb_valid
    i64* btb_tag
    i64* btb_target
    int btb_n
    int arbiter
    int pipeline_dirty
    # core constants
    i64 line
    int line_shift
    i64 page
    int page_shift
    int t_hit
    int t_miss
    int tlb_pen
    int mp_pen
    # addresses
    i64 spy_base
    i64 trojan_base
    i64 os_base
    i64 spy_targets
    i64 trojan_targets
    int extra_sets
    int extra_pages


cdef inline int lfsr_step(int s) nogil:
    cdef int fb = s & 0xB8
    fb ^= fb >> 4
    fb ^= fb >> 2
    fb ^= fb >> 1
    fb &= 1
    if (s & 0x7F) == 0:
        fb ^= 1
    return ((s << 1) | fb) & 0xFF


cdef inline int plru_touch(int tree, int way, int leaves) nogil:
    cdef int node = way + leaves - 1
    cdef int parent
    while node:
        parent = (node - 1) >> 1
        if node == 2 * parent + 1:
            tree |= 1 << parent
        else:
            tree &= ~(1 << parent)
        node = parent
    return tree


cdef inline int plru_victim(int tree, int leaves) nogil:
    cdef int node = 0
    while node < leaves - 1:
        node = 2 * node + 1 + ((tree >> node) & 1)
    return node - (leaves - 1)


cdef inline bint cache_access(Cache* c, i64 line) nogil:
    cdef int set_idx = <int>(line & (c.sets - 1))
    cdef i64 tag = line >> c.set_shift
    cdef int base = set_idx * c.ways
    cdef int free = -1
    cdef int w
    for w in range(base, base + c.ways):
        if c.valid[w]:
            if c.tag[w] == tag:
                return True
        elif free < 0:
            free = w
    c.lfsr = lfsr_step(c.lfsr)
    if free < 0:
        free = base + (c.lfsr & (c.ways - 1))
    c.valid[free] = 1
    c.tag[free] = tag
    return False


cdef inline i64 data_access(Model* m, i64 addr, int req) nogil:
    cdef int wait = (req - m.arbiter + 3) % 3
    m.arbiter = (req + 1) % 3
    m.pipeline_dirty = 1
    if cache_access(&m.l1d, addr >> m.line_shift):
        return m.t_hit + wait
    return m.t_miss + wait


cdef inline i64 inst_fetch(Model* m, i64 addr) nogil:
    m.pipeline_dirty = 1
    if cache_access(&m.l1i, addr >> m.line_shift):
        return m.t_hit
    return m.t_miss


cdef inline i64 tlb_access(Model* m, i64 addr) nogil:
    cdef i64 vpn = addr >> m.page_shift
    cdef int free = -1
    cdef int i
    m.pipeline_dirty = 1
    for i in range(m.tlb_n):
        if m.tlb_valid[i]:
            if m.tlb_vpn[i] == vpn:
                m.plru = plru_touch(m.plru, i, m.tlb_n)
                return 0
        elif free < 0:
            free = i
    if free < 0:
        free = plru_victim(m.plru, m.tlb_n)
    m.tlb_valid[free] = 1
    m.tlb_vpn[free] = vpn
    m.plru = plru_touch(m.plru, free, m.tlb_n)
    return m.tlb_pen


cdef inline i64 branch_cond(Model* m, i64 pc, bint taken) nogil:
    cdef int idx = <int>((pc // 4) % m.bht_n)
    cdef int c = m.bht[idx]
    cdef i64 lat = 0
    if (c >= 2) != taken:
        lat = m.mp_pen
    if taken:
        if c < 3:
            m.bht[idx] = c + 1
    elif c > 0:
        m.bht[idx] = c - 1
    m.pipeline_dirty = 1
    return lat


cdef inline i64 branch_indirect(Model* m, i64 pc, i64 target) nogil:
    cdef int idx = <int>((pc // 4) % m.btb_n)
    cdef i64 tag = (pc // 4) // m.btb_n
    cdef bint predicted = m.btb_valid[idx] and m.btb_tag[idx] == tag and m.btb_target[idx] == target
    m.btb_valid[idx] = 1
    m.btb_tag[idx] = tag
    m.btb_target[idx] = target
    m.pipeline_dirty = 1
    if predicted:
        return 0
    return m.mp_pen


cdef inline int l1_lines(Cache* c, int extra) nogil:
    return c.sets * c.ways + (extra if extra < c.sets else c.sets)


cdef i64 prime(Model* m, int ch) nogil:
    cdef i64 total = 0
    cdef int k, r, n
    if ch == CH_L1D:
        n = l1_lines(&m.l1d, m.extra_sets)
        for k in range(n):
            total += data_access(m, m.spy_base + k * m.line, REQ_LOAD)
    elif ch == CH_L1I:
        n = l1_lines(&m.l1i, m.extra_sets)
        for k in range(n):
            total += inst_fetch(m, m.spy_base + k * m.line)
    elif ch == CH_TLB:
        for k in range(m.tlb_n):
            total += tlb_access(m, m.spy_base + k * m.page)
    elif ch == CH_BTB:
        for k in range(m.btb_n):
            total += branch_indirect(m, m.spy_base + 4 * k, m.spy_targets + 64 * k)
    elif ch == CH_BHT:
        for r in range(3):
            for k in range(m.bht_n):
                total += branch_cond(m, m.spy_base + 4 * k, False)
    return total


cdef void trojan_encode(Model* m, int ch, int s) nogil:
    cdef int j, w, k
    if ch == CH_L1D:
        for j in range(s):
            for w in range(m.l1d.ways):
                data_access(m, m.trojan_base + (w * m.l1d.sets + j) * m.line, REQ_STORE)
    elif ch == CH_L1I:
        for j in range(s):
            for w in range(m.l1i.ways):
                inst_fetch(m, m.trojan_base + (w * m.l1i.sets + j) * m.line)
    elif ch == CH_TLB:
        for k in range(s):
            tlb_access(m, m.trojan_base + k * m.page)
    elif ch == CH_BTB:
        for k in range(s):
            branch_indirect(m, m.trojan_base + 4 * k, m.trojan_targets + 64 * k)
    elif ch == CH_BHT:
        for k in range(s):
            branch_cond(m, m.trojan_base + 4 * k, True)
            branch_cond(m, m.trojan_base + 4 * k, True)


cdef i64 spy_probe(Model* m, int ch) nogil:
    cdef i64 total = 0
    cdef int k, p, n
    if ch == CH_L1D:
        n = l1_lines(&m.l1d, m.extra_sets)
        for p in range(2):
            for k in range(n):
                total += data_access(m, m.spy_base + k * m.line, REQ_LOAD)
    elif ch == CH_L1I:
        n = l1_lines(&m.l1i, m.extra_sets)
        for p in range(2):
            for k in range(n):
                total += inst_fetch(m, m.spy_base + k * m.line)
    elif ch == CH_TLB:
        for p in range(2):
            for k in range(m.tlb_n + m.extra_pages):
                total += tlb_access(m, m.spy_base + k * m.page)
    elif ch == CH_BTB:
        for k in range(m.btb_n):
            total += branch_indirect(m, m.spy_base + 4 * k, m.spy_targets + 64 * k)
    elif ch == CH_BHT:
        for k in range(m.bht_n):
            total += branch_cond(m, m.spy_base + 4 * k, False)
    return total


cdef void clear_bytes(unsigned char* p, int n) nogil:
    cdef int i
    for i in range(n):
        p[i] = 0


cdef void clear_words(i64* p, int n) nogil:
    cdef int i
    for i in range(n):
        p[i] = 0


cdef void fence(Model* m, bint full) nogil:
    cdef int nd = m.l1d.sets * m.l1d.ways
    cdef int ni = m.l1i.sets * m.l1i.ways
    clear_bytes(m.l1d.valid, nd)
    clear_words(m.l1d.tag, nd)
    clear_bytes(m.l1i.valid, ni)
    clear_words(m.l1i.tag, ni)
    clear_bytes(m.tlb_valid, m.tlb_n)
    clear_words(m.tlb_vpn, m.tlb_n)
    clear_bytes(m.bht, m.bht_n)
    clear_bytes(m.btb_valid, m.btb_n)
    clear_words(m.btb_tag, m.btb_n)
    clear_words(m.btb_target, m.btb_n)
    m.pipeline_dirty = 0
    if full:
        m.l1d.lfsr = 0
        m.l1i.lfsr = 0
        m.plru = 0
        m.arbiter = 0


cdef void os_switch(Model* m, int defence) nogil:
    cdef int p, k, n
    if defence == DEF_PRIME1 or defence == DEF_PRIME2:
        n = m.l1d.sets * m.l1d.ways
        for p in range(1 if defence == DEF_PRIME1 else 2):
            for k in range(n):
                data_access(m, m.os_base + k * m.line, REQ_LOAD)
    elif defence == DEF_FIRST:
        fence(m, False)
    elif defence == DEF_FULL:
        fence(m, True)


def run_iterations(state, core, int channel, int defence, secrets):
    """Compiled twin of ``run_iterations_py``; mutates ``state`` in place."""
    cdef unsigned char[::1] d_valid = state.l1d.valid
    cdef i64[::1] d_tag = state.l1d.tag
    cdef unsigned char[::1] i_valid = state.l1i.valid
    cdef i64[::1] i_tag = state.l1i.tag
    cdef unsigned char[::1] t_valid = state.tlb.valid
    cdef i64[::1] t_vpn = state.tlb.vpn
    cdef unsigned char[::1] bht = state.bht.counters
    cdef unsigned char[::1] b_valid = state.btb.valid
    cdef i64[::1] b_tag = state.btb.tag
    cdef i64[::1] b_target = state.btb.target
    cdef i64[::1] sec = np.ascontiguousarray(secrets, dtype=np.int64)
    cdef int n = sec.shape[0]
    out_arr = np.empty(n, dtype=np.int64)
    cdef i64[::1] out = out_arr
    cdef int lim, i
    cdef Model m

    if not 0 <= channel <= 4 or not 0 <= defence <= 4:
        raise ValueError("unknown channel or defence code")
    lim = (state.l1d.sets, state.l1i.sets, state.tlb.entries,
           state.btb.entries, state.bht.entries)[channel]
    for i in range(n):
        if sec[i] < 0 or sec[i] > lim:
            raise ValueError(f"secret {sec[i]} outside [0, {lim}]")

    m.l1d.valid = &d_valid[0]
    m.l1d.tag = &d_tag[0]
    m.l1d.sets = state.l1d.sets
    m.l1d.ways = state.l1d.ways
    m.l1d.set_shift = (state.l1d.sets).bit_length() - 1
    m.l1d.lfsr = state.l1d.lfsr
    m.l1i.valid = &i_valid[0]
    m.l1i.tag = &i_tag[0]
    m.l1i.sets = state.l1i.sets
    m.l1i.ways = state.l1i.ways
    m.l1i.set_shift = (state.l1i.sets).bit_length() - 1
    m.l1i.lfsr = state.l1i.lfsr
    m.tlb_valid = &t_valid[0]
    m.tlb_vpn = &t_vpn[0]
    m.tlb_n = state.tlb.entries
    m.plru = state.tlb.plru
    m.bht = &bht[0]
    m.bht_n = state.bht.entries
    m.btb_valid = &b_valid[0]
    m.btb_tag = &b_tag[0]
    m.btb_target = &b_target[0]
    m.btb_n = state.btb.entries
    m.arbiter = state.arbiter.pointer
    m.pipeline_dirty = state.pipeline_dirty
    m.line = core.line_bytes
    m.line_shift = core.line_bytes.bit_length() - 1
    m.page = core.page_bytes
    m.page_shift = core.page_bytes.bit_length() - 1
    m.t_hit = core.t_hit
    m.t_miss = core.t_miss
    m.tlb_pen = core.tlb_miss_penalty
    m.mp_pen = core.mispredict_penalty
    m.spy_base = SPY_BASE
    m.trojan_base = TROJAN_BASE
    m.os_base = OS_BASE
    m.spy_targets = SPY_TARGETS
    m.trojan_targets = TROJAN_TARGETS
    m.extra_sets = EXTRA_SETS
    m.extra_pages = EXTRA_PAGES

    with nogil:
        for i in range(n):
            prime(&m, channel)
            os_switch(&m, defence)
            trojan_encode(&m, channel, <int>sec[i])
            os_switch(&m, defence)
            out[i] = spy_probe(&m, channel)

    state.l1d.lfsr = m.l1d.lfsr
    state.l1i.lfsr = m.l1i.lfsr
    state.tlb.plru = m.plru
    state.arbiter.pointer = m.arbiter
    state.pipeline_dirty = bool(m.pipeline_dirty)
    return out_arr
