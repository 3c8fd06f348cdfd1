"""Data-center state and energy/SLAV accounting.

Energy is measured in MHz x slot: the slot length is normalized to 1, so a
VM's energy in slot t equals its CPU usage in that slot. Per slot:

    EC_host = sum_j chi_j * (base_j + sum_{vm on j} ec_vm)
    MC      = 0.10 * sum_{vm migrated} ec_vm
    SLAVC   = c_slav * sum_j upsilon_j * sum_{vm on j} d_vm
    EC      = EC_host + MC + SLAVC

chi_j is 1 iff host j has a VM; upsilon_j is 1 iff its summed VM energy
reaches capacity (>=). Overloaded hosts are not throttled; SLAVC is the only
penalty. Sums run in ascending host index, then ascending vm_id.
"""

import logging
import math
from dataclasses import dataclass, replace
from types import MappingProxyType
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from .config import ClusterConfig
from .errors import ConstraintViolation, InvariantViolation, SlotOutOfRange
from .trace import RequestSet, VmProfile

logger = logging.getLogger(__name__)

MIGRATION_OVERHEAD = 0.10


@dataclass(frozen=True)
class HostSpec:
    """Static description of one host."""

    host_id: int
    capacity_mhz: float
    base_power: float
    bandwidth_kbps: float

    def __post_init__(self):
        if not self.capacity_mhz > 0:
            raise InvariantViolation(f"host {self.host_id}: capacity_mhz must be positive")
        if not self.base_power >= 0:
            raise InvariantViolation(f"host {self.host_id}: base_power must be non-negative")
        if not self.bandwidth_kbps > 0:
            raise InvariantViolation(f"host {self.host_id}: bandwidth_kbps must be positive")


class Placement:
    """Assignment of every VM to exactly one host, with per-host member sets."""

    def __init__(self, assignment: Mapping[str, int], host_count: int):
        self._assignment = dict(assignment)
        self.host_count = host_count
        members: List[List[str]] = [[] for _ in range(host_count)]
        for vm_id, host in self._assignment.items():
            if not 0 <= host < host_count:
                raise ConstraintViolation(f"VM {vm_id} assigned to unknown host {host}", host=host)
            members[host].append(vm_id)
        self._members = tuple(tuple(sorted(group)) for group in members)

    @property
    def assignment(self) -> Mapping[str, int]:
        return MappingProxyType(self._assignment)

    def host_of(self, vm_id: str) -> int:
        try:
            return self._assignment[vm_id]
        except KeyError:
            raise ConstraintViolation(f"VM {vm_id} is not placed") from None

    def members(self, host: int) -> Tuple[str, ...]:
        return self._members[host]

    def is_active(self, host: int) -> bool:
        return bool(self._members[host])

    def with_moves(self, moves: Mapping[str, int]) -> "Placement":
        """Return a new placement with ``moves`` (vm_id -> host) applied."""
        if not moves:
            return self
        assignment = dict(self._assignment)
        for vm_id, host in moves.items():
            if vm_id not in assignment:
                raise ConstraintViolation(f"VM {vm_id} is not placed")
            assignment[vm_id] = host
        return Placement(assignment, self.host_count)

    def check_partition(self, vm_ids: Iterable[str]) -> None:
        """Raise unless the placement covers exactly ``vm_ids``."""
        expected = set(vm_ids)
        placed = set(self._assignment)
        if expected != placed:
            missing = sorted(expected - placed)[:5]
            extra = sorted(placed - expected)[:5]
            raise ConstraintViolation(f"placement is not a partition (missing={missing}, extra={extra})")

    def __len__(self) -> int:
        return len(self._assignment)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Placement):
            return NotImplemented
        return self.host_count == other.host_count and self._assignment == other._assignment

    def __repr__(self) -> str:
        return f"Placement(vms={len(self)}, hosts={self.host_count})"


@dataclass(frozen=True)
class MigrationSet:
    """VMs selected for migration in one slot, with their source hosts.

    Entries keep the selection order; that order is the placement order.
    """

    entries: Tuple[Tuple[str, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((str(vm), int(src)) for vm, src in self.entries))
        seen = set()
        for vm_id, _ in self.entries:
            if vm_id in seen:
                raise ConstraintViolation(f"VM {vm_id} selected twice")
            seen.add(vm_id)

    @classmethod
    def from_vms(cls, placement: Placement, vm_ids: Iterable[str]) -> "MigrationSet":
        return cls(tuple((vm_id, placement.host_of(vm_id)) for vm_id in vm_ids))

    @property
    def vm_ids(self) -> Tuple[str, ...]:
        return tuple(vm_id for vm_id, _ in self.entries)

    def by_source(self) -> Dict[int, List[str]]:
        """Group as MIG_{j,t}: source host -> selected VMs."""
        groups: Dict[int, List[str]] = {}
        for vm_id, source in self.entries:
            groups.setdefault(source, []).append(vm_id)
        return groups

    def check_against(self, placement: Placement, slot: Optional[int] = None) -> None:
        """Only VMs running on their claimed source host may be selected."""
        for vm_id, source in self.entries:
            if vm_id not in placement.assignment:
                raise ConstraintViolation(f"VM {vm_id} is not placed", slot=slot, host=source)
            if placement.assignment[vm_id] != source:
                raise ConstraintViolation(
                    f"VM {vm_id} runs on host {placement.assignment[vm_id]}, not on claimed source",
                    slot=slot,
                    host=source,
                )

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Tuple[str, int]]:
        return iter(self.entries)


@dataclass(frozen=True)
class SlotAccounting:
    """Energy breakdown and host indicators of one simulated slot."""

    slot: int
    ec_host: float
    mc: float
    slavc: float
    ec_total: float
    chi: Tuple[int, ...]
    upsilon: Tuple[int, ...]
    migrations: Tuple[Tuple[str, int, int], ...] = ()
    failed: Tuple[str, ...] = ()

    @property
    def migration_count(self) -> int:
        return len(self.migrations)

    @property
    def overloaded_hosts(self) -> int:
        return sum(self.upsilon)

    @property
    def active_hosts(self) -> int:
        return sum(self.chi)


@dataclass
class PlacementProblem:
    """Input of a placement policy for one slot.

    ``loads`` and ``occupancy`` still count every VM being placed on its
    source; a placer releases a VM's share there only once it has a
    destination, so a VM left unplaced never lands on a host that was
    filled in its absence.
    """

    hosts: Tuple[HostSpec, ...]
    loads: List[float]
    occupancy: List[int]
    vms: List[Tuple[str, int, float]]
    slot: int

    def feasible(self, host: int, source: int, ec: float, loads: Sequence[float]) -> bool:
        """No SLAV after adding the VM, and not the VM's source host."""
        return host != source and loads[host] + ec < self.hosts[host].capacity_mhz

    def estimate_power(self, host: int, ec: float, occupancy: Sequence[int]) -> float:
        """Marginal power of adding a VM: its energy, plus base power when waking a host."""
        wake = self.hosts[host].base_power if occupancy[host] == 0 else 0.0
        return wake + ec


Placer = Callable[[PlacementProblem], Dict[str, int]]


@dataclass(frozen=True)
class ClusterState:
    """Data-center state at the start of slot ``slot``.

    ``history[j]`` holds host j's post-migration utilizations (load / capacity)
    of the slots already simulated; ``overload_slots[j]`` counts those with
    upsilon_j = 1. ``slot == request.slot_count`` marks the terminal state.
    """

    hosts: Tuple[HostSpec, ...]
    request: RequestSet
    placement: Placement
    slot: int = 0
    slav_penalty_ratio: float = 0.5
    history: Tuple[Tuple[float, ...], ...] = ()
    overload_slots: Tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= self.slot <= self.request.slot_count:
            raise SlotOutOfRange(self.slot, self.request.slot_count)
        if not 0.0 <= self.slav_penalty_ratio <= 1.0:
            raise InvariantViolation("slav_penalty_ratio must lie in [0, 1]")
        if self.placement.host_count != len(self.hosts):
            raise ConstraintViolation("placement host count differs from the fleet size")
        if not self.history:
            object.__setattr__(self, "history", tuple(() for _ in self.hosts))
        if not self.overload_slots:
            object.__setattr__(self, "overload_slots", tuple(0 for _ in self.hosts))

    @property
    def host_count(self) -> int:
        return len(self.hosts)

    @property
    def is_terminal(self) -> bool:
        return self.slot >= self.request.slot_count

    def profile(self, vm_id: str) -> VmProfile:
        return self.request.by_id[vm_id]

    def host_load(self, host: int, t: Optional[int] = None) -> float:
        """Summed VM energy on ``host`` in slot ``t`` (default: current slot)."""
        t = self.slot if t is None else t
        return _sum_energy(self, self.placement.members(host), t)

    def utilization(self, host: int, t: Optional[int] = None) -> float:
        return self.host_load(host, t) / self.hosts[host].capacity_mhz

    @property
    def observed_slot(self) -> int:
        """Latest slot whose usage monitoring has reported when slot ``slot`` starts.

        Decisions for slot t see usage up to t - 1; slot 0 falls back to the
        slot-0 usage the initial placement was made from.
        """
        return max(self.slot - 1, 0)

    def observed_history(self, host: int) -> Tuple[float, ...]:
        """Recorded post-migration utilizations, or the slot-0 one before any slot ran."""
        if self.history[host]:
            return self.history[host]
        return (self.utilization(host, self.observed_slot),)


def _sum_energy(state: ClusterState, vm_ids: Iterable[str], t: int) -> float:
    total = 0.0
    for vm_id in vm_ids:
        total += vm_energy(state.request.by_id[vm_id], t)
    return total


def vm_energy(vm: VmProfile, t: int) -> float:
    """Energy of one VM in slot ``t`` (usage held constant over a unit slot)."""
    if not 0 <= t < vm.slot_count:
        raise SlotOutOfRange(t, vm.slot_count)
    return float(vm.cpu_usage[t]) * 1.0


def host_overloaded(state: ClusterState, j: int, t: int) -> int:
    """Overload indicator: 1 iff summed VM energy on host j reaches its capacity."""
    return 1 if state.host_load(j, t) >= state.hosts[j].capacity_mhz else 0


def slot_host_energy(state: ClusterState, t: int) -> float:
    """Energy of all active hosts in slot ``t``; empty hosts consume nothing."""
    total = 0.0
    for j, host in enumerate(state.hosts):
        if not state.placement.is_active(j):
            continue
        total += host.base_power + state.host_load(j, t)
    return total


def migration_cost(state: ClusterState, mig: MigrationSet, t: int) -> float:
    """Extra 10% of the migrated VMs' energy in slot ``t``."""
    return MIGRATION_OVERHEAD * _sum_energy(state, sorted(mig.vm_ids), t)


def slav_compensation(state: ClusterState, t: int) -> float:
    """SLAV penalty: c_slav times the declared demand resident on overloaded hosts."""
    total = 0.0
    for j in range(state.host_count):
        if host_overloaded(state, j, t):
            total += sum(state.profile(vm_id).d_vm for vm_id in state.placement.members(j))
    return state.slav_penalty_ratio * total


def account_slot(
    state: ClusterState,
    t: int,
    moved: Sequence[Tuple[str, int, int]] = (),
    failed: Sequence[str] = (),
) -> SlotAccounting:
    """Evaluate slot ``t`` for the state's current placement."""
    chi = tuple(1 if state.placement.is_active(j) else 0 for j in range(state.host_count))
    upsilon = tuple(host_overloaded(state, j, t) for j in range(state.host_count))
    ec_host = slot_host_energy(state, t)
    mc = migration_cost(state, MigrationSet(tuple((vm, src) for vm, src, _ in moved)), t)
    slavc = slav_compensation(state, t)
    return SlotAccounting(
        slot=t,
        ec_host=ec_host,
        mc=mc,
        slavc=slavc,
        ec_total=ec_host + mc + slavc,
        chi=chi,
        upsilon=upsilon,
        migrations=tuple(moved),
        failed=tuple(failed),
    )


@dataclass(frozen=True)
class PlacementCheck:
    """Outcome of the three placement constraints for one slot.

    Attributes:
        unassigned: Selected VMs without a destination (constraint 1)
        same_host: Selected VMs whose destination is their source (constraint 2)
        overloaded_destinations: Destination hosts in SLAV after migration (constraint 3)
        moved_unselected: VMs moved although they were not selected
    """

    unassigned: Tuple[str, ...] = ()
    same_host: Tuple[str, ...] = ()
    overloaded_destinations: Tuple[int, ...] = ()
    moved_unselected: Tuple[str, ...] = ()

    @property
    def c1(self) -> bool:
        return not self.unassigned

    @property
    def c2(self) -> bool:
        return not self.same_host

    @property
    def c3(self) -> bool:
        return not self.overloaded_destinations

    @property
    def ok(self) -> bool:
        return self.c1 and self.c2 and self.c3 and not self.moved_unselected


def validate_placement_result(
    before: Placement,
    mig: MigrationSet,
    after: Placement | Mapping[str, int],
    state: ClusterState,
) -> PlacementCheck:
    """Check a placement outcome against the selection/placement constraints.

    ``after`` may be a full placement or a placer's partial allocation
    (vm_id -> destination). Usages are those of ``state.slot``.
    """
    after_map = after.assignment if isinstance(after, Placement) else after
    selected = dict(mig.entries)
    unassigned = tuple(vm_id for vm_id in selected if vm_id not in after_map)
    same_host = tuple(
        vm_id for vm_id, src in selected.items() if vm_id in after_map and after_map[vm_id] == src
    )
    moved_unselected = tuple(
        sorted(
            vm_id
            for vm_id, host in after_map.items()
            if vm_id not in selected and before.host_of(vm_id) != host
        )
    )
    moves = {vm_id: after_map[vm_id] for vm_id in selected if vm_id in after_map}
    trial = replace(state, placement=before.with_moves(moves))
    destinations = sorted({host for vm_id, host in moves.items() if host != selected[vm_id]})
    overloaded = tuple(j for j in destinations if host_overloaded(trial, j, state.slot))
    return PlacementCheck(unassigned, same_host, overloaded, moved_unselected)


def placement_problem(state: ClusterState, mig: MigrationSet) -> PlacementProblem:
    """Build the placer input for the selected VMs of the current slot."""
    t = state.slot
    loads = [state.host_load(j) for j in range(state.host_count)]
    occupancy = [len(state.placement.members(j)) for j in range(state.host_count)]
    vms = [(vm_id, source, vm_energy(state.profile(vm_id), t)) for vm_id, source in mig.entries]
    return PlacementProblem(state.hosts, loads, occupancy, vms, t)


def advance_slot(
    state: ClusterState, mig: MigrationSet, placer: Placer
) -> Tuple[ClusterState, SlotAccounting]:
    """Simulate the current slot and move to the next one.

    Event order: apply slot-t usage, place the selected VMs, compute the
    indicators and energy terms on the post-migration placement, mark hosts
    left empty inactive, advance the slot. Selected VMs the placer cannot
    place stay on their source host and cost nothing; their load was never
    released there, so every destination must stay below capacity.

    Raises:
        SlotOutOfRange: if the state is terminal
        ConstraintViolation: if ``mig`` or the placer output breaks a constraint
    """
    t = state.slot
    if state.is_terminal:
        raise SlotOutOfRange(t, state.request.slot_count)
    mig.check_against(state.placement, slot=t)

    allocation = placer(placement_problem(state, mig)) if len(mig) else {}
    check = validate_placement_result(state.placement, mig, allocation, state)
    if check.same_host:
        raise ConstraintViolation(f"destination equals source for {list(check.same_host)}", slot=t)
    if check.overloaded_destinations:
        host = check.overloaded_destinations[0]
        raise ConstraintViolation("placement overloads its destination", slot=t, host=host)
    if check.moved_unselected:
        raise ConstraintViolation(f"placer moved unselected VMs {list(check.moved_unselected)}", slot=t)
    if check.unassigned:
        logger.warning(
            f"slot {t}: no feasible host for {len(check.unassigned)} selected VM(s); "
            f"they stay on their source ({', '.join(check.unassigned[:5])})"
        )

    moved = tuple(
        (vm_id, source, allocation[vm_id]) for vm_id, source in mig.entries if vm_id in allocation
    )
    post = replace(state, placement=state.placement.with_moves(allocation))
    accounting = account_slot(post, t, moved, check.unassigned)

    history = tuple(
        past + (post.utilization(j, t),) for j, past in enumerate(post.history)
    )
    overload_slots = tuple(
        count + flag for count, flag in zip(post.overload_slots, accounting.upsilon)
    )
    logger.debug(
        f"slot {t}: EC={accounting.ec_total:.1f} migrations={len(moved)} "
        f"overloaded={accounting.overloaded_hosts} active={accounting.active_hosts}"
    )
    return replace(post, slot=t + 1, history=history, overload_slots=overload_slots), accounting


def build_hosts(request: RequestSet, config: ClusterConfig) -> Tuple[HostSpec, ...]:
    """Homogeneous fleet sized for the request unless ``config.count`` is set.

    Default size: ceil(N * mean(d_vm) / (sizing_target * capacity)).
    """
    if config.count is not None:
        count = config.count
    elif len(request) == 0:
        count = 1
    else:
        mean_demand = sum(p.d_vm for p in request.profiles) / len(request)
        count = max(1, math.ceil(len(request) * mean_demand / (config.sizing_target * config.capacity_mhz)))
    return tuple(
        HostSpec(
            host_id=j,
            capacity_mhz=config.capacity_mhz,
            base_power=config.effective_base_power,
            bandwidth_kbps=config.bandwidth_kbps,
        )
        for j in range(count)
    )


def initial_placement(
    request: RequestSet, hosts: Sequence[HostSpec], fill: float = 0.7
) -> Placement:
    """Slot-0 allocation: first-fit decreasing on slot-0 CPU usage.

    A VM goes to the first host whose slot-0 load stays within
    ``fill * capacity``; if none qualifies, to the least-loaded host.
    """
    if not hosts:
        raise InvariantViolation("the fleet has no hosts")
    loads = [0.0] * len(hosts)
    assignment: Dict[str, int] = {}
    ordered = sorted(request.profiles, key=lambda p: (-p.cpu_usage[0] if p.slot_count else 0.0, p.vm_id))
    for profile in ordered:
        usage = profile.cpu_usage[0] if profile.slot_count else 0.0
        target = next(
            (j for j, host in enumerate(hosts) if loads[j] + usage <= fill * host.capacity_mhz),
            None,
        )
        if target is None:
            target = min(range(len(hosts)), key=lambda j: (loads[j], j))
        loads[target] += usage
        assignment[profile.vm_id] = target
    return Placement(assignment, len(hosts))


def new_state(request: RequestSet, config: ClusterConfig) -> ClusterState:
    """Fresh episode state: sized fleet, initial placement, slot 0."""
    hosts = build_hosts(request, config)
    placement = initial_placement(request, hosts, config.initial_fill)
    return ClusterState(
        hosts=hosts,
        request=request,
        placement=placement,
        slav_penalty_ratio=config.slav_penalty_ratio,
    )
