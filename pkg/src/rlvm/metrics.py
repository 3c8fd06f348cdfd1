"""Episode metrics: total energy, SLATAH, PDM, SLAV and migration counts."""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import pandas as pd

from .cluster import MIGRATION_OVERHEAD, SlotAccounting
from .trace import RequestSet

PER_SLOT_COLUMNS = (
    "slot",
    "ec_host",
    "mc",
    "slavc",
    "ec_total",
    "migrations",
    "overloaded_hosts",
    "active_hosts",
)
SUMMARY_COLUMNS = ("method", "request", "total_ec", "slatah", "pdm", "slav", "migrations", "seed")


@dataclass(frozen=True)
class EpisodeMetrics:
    """Headline results of one episode.

    Attributes:
        total_ec: Sum of per-slot total energy
        slatah: SLA violation time per active host
        pdm: Performance degradation due to migrations
        slav: slatah * pdm
        migrations: Number of VM migrations
        failed_placements: Selected VMs no host could take
        per_slot: (slot, ec_total, migrations, overloaded_hosts) per slot
    """

    total_ec: float = 0.0
    ec_host: float = 0.0
    mc: float = 0.0
    slavc: float = 0.0
    slatah: float = 0.0
    pdm: float = 0.0
    slav: float = 0.0
    migrations: int = 0
    failed_placements: int = 0
    per_slot: Tuple[Tuple[int, float, int, int], ...] = ()


def slatah(accounting: Sequence[SlotAccounting], host_count: int) -> float:
    """Mean over hosts of overloaded slots / active slots; never-active hosts count 0."""
    if host_count <= 0:
        return 0.0
    total = 0.0
    for j in range(host_count):
        active = sum(slot.chi[j] for slot in accounting)
        if active == 0:
            continue
        total += sum(slot.upsilon[j] for slot in accounting) / active
    return total / host_count


def pdm(accounting: Sequence[SlotAccounting], request: RequestSet) -> float:
    """Mean over VMs of migration-degraded CPU / CPU demanded over the episode."""
    if len(request) == 0:
        return 0.0
    degraded: Dict[str, float] = {}
    for slot in accounting:
        for vm_id, _, _ in slot.migrations:
            usage = request.by_id[vm_id].cpu_usage[slot.slot]
            degraded[vm_id] = degraded.get(vm_id, 0.0) + MIGRATION_OVERHEAD * usage
    total = 0.0
    for vm_id in request.vm_ids:
        if vm_id in degraded:
            profile = request.by_id[vm_id]
            total += degraded[vm_id] / (profile.d_vm * request.slot_count)
    return total / len(request)


def summarize(
    accounting: Sequence[SlotAccounting], request: RequestSet, host_count: int
) -> EpisodeMetrics:
    """Fold the per-slot records of one episode, in slot order."""
    if not accounting:
        return EpisodeMetrics()
    sla_time = slatah(accounting, host_count)
    degradation = pdm(accounting, request)
    return EpisodeMetrics(
        total_ec=sum(slot.ec_total for slot in accounting),
        ec_host=sum(slot.ec_host for slot in accounting),
        mc=sum(slot.mc for slot in accounting),
        slavc=sum(slot.slavc for slot in accounting),
        slatah=sla_time,
        pdm=degradation,
        slav=sla_time * degradation,
        migrations=sum(slot.migration_count for slot in accounting),
        failed_placements=sum(len(slot.failed) for slot in accounting),
        per_slot=tuple(
            (slot.slot, slot.ec_total, slot.migration_count, slot.overloaded_hosts)
            for slot in accounting
        ),
    )


def per_slot_frame(accounting: Sequence[SlotAccounting]) -> pd.DataFrame:
    rows = [
        (
            slot.slot,
            slot.ec_host,
            slot.mc,
            slot.slavc,
            slot.ec_total,
            slot.migration_count,
            slot.overloaded_hosts,
            slot.active_hosts,
        )
        for slot in accounting
    ]
    return pd.DataFrame(rows, columns=list(PER_SLOT_COLUMNS))


def summary_row(metrics: EpisodeMetrics, method: str, request: str, seed: int) -> Dict[str, object]:
    return {
        "method": method,
        "request": request,
        "total_ec": metrics.total_ec,
        "slatah": metrics.slatah,
        "pdm": metrics.pdm,
        "slav": metrics.slav,
        "migrations": metrics.migrations,
        "seed": seed,
    }


def summary_frame(rows: List[Mapping[str, object]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=list(SUMMARY_COLUMNS))


def median_by_method(summary: pd.DataFrame) -> pd.DataFrame:
    """Median over seeds of every metric, per (request, method), keeping input order."""
    metrics = ["total_ec", "slatah", "pdm", "slav", "migrations"]
    grouped = summary.groupby(["request", "method"], sort=False)[metrics].median()
    return grouped.reset_index()


AGENT_METHOD = "rl-pabfd"
# cheapest expected first
BASELINE_ORDER = ("lr-mmt-pabfd", "lr-mmt-ff", "lr-mmt-random")
TARGET_COLUMNS = ("request", "target", "passed", "agent", "reference")


def target_checks(
    medians: pd.DataFrame,
    ec_tolerance: float = 0.02,
    slav_margin: float = 0.9,
    migration_slack: float = 1.1,
) -> pd.DataFrame:
    """Check the agent against the baselines on every request that ran all four methods.

    Three targets per request, on the seed medians:

    - ``ec_order``: EC(agent) <= EC(pabfd) <= EC(ff) <= EC(random), each
      adjacent pair within ``ec_tolerance``
    - ``slav``: agent SLAV at most ``slav_margin`` x the best baseline SLAV,
      which must itself be positive
    - ``migrations``: agent count at most ``migration_slack`` x the fewest
      baseline migrations
    """
    rows = []
    for request, group in medians.groupby("request", sort=False):
        by_method = group.set_index("method")
        if any(method not in by_method.index for method in (AGENT_METHOD, *BASELINE_ORDER)):
            continue
        ec = [float(by_method.loc[m, "total_ec"]) for m in (AGENT_METHOD, *BASELINE_ORDER)]
        ordered = all(lower <= upper * (1.0 + ec_tolerance) for lower, upper in zip(ec, ec[1:]))
        rows.append((request, "ec_order", ordered, ec[0], ec[1]))

        best_slav = min(float(by_method.loc[m, "slav"]) for m in BASELINE_ORDER)
        agent_slav = float(by_method.loc[AGENT_METHOD, "slav"])
        rows.append((request, "slav", best_slav > 0 and agent_slav <= slav_margin * best_slav, agent_slav, best_slav))

        fewest = min(float(by_method.loc[m, "migrations"]) for m in BASELINE_ORDER)
        agent_migrations = float(by_method.loc[AGENT_METHOD, "migrations"])
        rows.append((request, "migrations", agent_migrations <= migration_slack * fewest, agent_migrations, fewest))
    return pd.DataFrame(rows, columns=list(TARGET_COLUMNS))
