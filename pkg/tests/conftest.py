"""Shared fixtures: small hand-built requests and cluster states."""

from typing import Dict, Mapping, Optional, Sequence

import pytest

from rlvm.cluster import ClusterState, HostSpec, Placement
from rlvm.trace import RequestSet, VmProfile


def build_request(
    usages: Mapping[str, Sequence[float]],
    d_vm: float | Mapping[str, float] = 2000.0,
    ram: Optional[Mapping[str, float]] = None,
    ram_demand: float = 4096.0,
    name: str = "test",
) -> RequestSet:
    profiles = []
    for vm_id, series in usages.items():
        demand = d_vm[vm_id] if isinstance(d_vm, Mapping) else d_vm
        ram_value = ram[vm_id] if ram else 1024.0
        profiles.append(
            VmProfile(
                vm_id=vm_id,
                d_vm=demand,
                ram_demand_kb=ram_demand,
                cpu_usage=tuple(float(u) for u in series),
                ram_usage=tuple(float(ram_value) for _ in series),
            )
        )
    slot_count = len(next(iter(usages.values()))) if usages else 1
    return RequestSet(name=name, profiles=tuple(profiles), slot_count=slot_count)


def build_state(
    request: RequestSet,
    assignment: Dict[str, int],
    host_count: int,
    capacity: float = 1000.0,
    base: float = 100.0,
    bandwidth: float = 100_000.0,
    ratio: float = 0.5,
) -> ClusterState:
    hosts = tuple(HostSpec(j, capacity, base, bandwidth) for j in range(host_count))
    return ClusterState(
        hosts=hosts,
        request=request,
        placement=Placement(assignment, host_count),
        slav_penalty_ratio=ratio,
    )


@pytest.fixture
def make_request():
    """Factory: ``make_request({"a": [500, 500]}, d_vm=..., ram=...)``."""
    return build_request


@pytest.fixture
def make_state():
    """Factory: ``make_state(request, {"a": 0}, host_count=2, capacity=1000, base=100)``."""
    return build_state
