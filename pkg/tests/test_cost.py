import pytest
from hypothesis import given
from hypothesis import strategies as st

from tempus.cost import (
    BASE_COLD,
    component_costs,
    flush_cost,
    prime2_cost,
    switch_report,
    writeback_flush_cost,
)
from tempus.uarch import FULL, CoreConfig, Flush


def test_flush_cost_examples(core):
    assert flush_cost(core, Flush.L1D_VALID) == 256
    assert flush_cost(core, Flush.L1D_LFSR | Flush.L1I_LFSR | Flush.ARBITER | Flush.TLB_PLRU) == 1
    assert flush_cost(core, FULL) == 321


def test_component_costs(core):
    costs = component_costs(core)
    assert costs["l1d_valid"] == costs["l1i_valid"] == 256
    assert costs["pipeline"] == 64
    assert all(costs[k] == 1 for k in ("tlb_valid", "bht", "btb", "l1d_lfsr", "arbiter"))


def test_switch_report_defaults():
    r = switch_report()
    assert r.fence_total == 321
    assert r.switch_fence == BASE_COLD + 321 == 1501
    assert abs(r.switch_fence - 1502) / 1502 < 0.01
    assert r.switch_hot == 430 and r.switch_cold == 1180
    assert r.switch_prime2 / r.switch_fence >= 25
    assert set(r.as_dict()) == {
        "per_component", "fence_total", "switch_hot", "switch_cold", "switch_prime2", "switch_fence",
    }


def test_prime2_is_simulated():
    small = CoreConfig(l1d_size_bytes=8192)
    assert prime2_cost(small) < prime2_cost(CoreConfig())
    assert switch_report(base_cold=0).switch_prime2 == prime2_cost(CoreConfig())


def test_fence_tiny_next_to_prime2():
    r = switch_report()
    assert r.fence_total < 0.01 * (r.switch_prime2 - r.switch_cold)


def test_writeback_cost(core):
    assert writeback_flush_cost(core, 0) == 0
    assert writeback_flush_cost(core, 2048) == 4096
    with pytest.raises(ValueError):
        writeback_flush_cost(core, 2049)


@given(st.integers(0, int(FULL)), st.integers(0, int(FULL)))
def test_cost_monotone(a, b):
    core = CoreConfig()
    assert flush_cost(core, a | b) >= max(flush_cost(core, a), flush_cost(core, b))
