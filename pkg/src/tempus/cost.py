"""Flush latency and context-switch cost of each defence."""

from __future__ import annotations

from dataclasses import dataclass, field

from tempus.attack import Channel, os_prime, prime, trojan_encode
from tempus.uarch import FULL, CoreConfig, Flush, flush_cost, reset_state

__all__ = ["CostReport", "flush_cost", "switch_report", "writeback_flush_cost", "component_costs"]

#: Cold/hot inter-address-space IPC latencies of the unmodified kernel, in cycles.
BASE_COLD = 1180
BASE_HOT = 430


@dataclass
class CostReport:
    per_component: dict[str, int] = field(default_factory=dict)
    fence_total: int = 0
    switch_hot: int = 0
    switch_cold: int = 0
    switch_prime2: int = 0
    switch_fence: int = 0

    def as_dict(self) -> dict:
        return {
            "per_component": dict(self.per_component),
            "fence_total": self.fence_total,
            "switch_hot": self.switch_hot,
            "switch_cold": self.switch_cold,
            "switch_prime2": self.switch_prime2,
            "switch_fence": self.switch_fence,
        }


def component_costs(core: CoreConfig) -> dict[str, int]:
    """Flush latency of each component on its own."""
    return {bit.name.lower(): flush_cost(core, bit) for bit in Flush}


def prime2_cost(core: CoreConfig) -> int:
    """Simulated cycles of two OS priming passes over an L1-D the Trojan has just filled."""
    state = reset_state(core)
    prime(Channel.L1D, state, core)
    trojan_encode(Channel.L1D, state, core, Channel.L1D.secret_range(core))
    return os_prime(state, core, 2)


def switch_report(
    core: CoreConfig | None = None, base_cold: int = BASE_COLD, base_hot: int = BASE_HOT
) -> CostReport:
    core = core or CoreConfig()
    fence = flush_cost(core, FULL)
    return CostReport(
        per_component=component_costs(core),
        fence_total=fence,
        switch_hot=base_hot,
        switch_cold=base_cold,
        switch_prime2=base_cold + prime2_cost(core),
        switch_fence=base_cold + fence,
    )


def writeback_flush_cost(core: CoreConfig, dirty_lines: int, bytes_per_cycle: int = 8) -> int:
    """Write-back time for ``dirty_lines`` dirty L1-D lines.

    The simulated caches are write-through, so this only reports what a
    write-back L1-D would add; the OS would have to pad every switch to the
    all-dirty worst case.
    """
    total_lines = core.l1d_sets * core.l1d_ways
    if not 0 <= dirty_lines <= total_lines:
        raise ValueError(f"dirty_lines must lie in [0, {total_lines}]")
    return dirty_lines * core.line_bytes // bytes_per_cycle
