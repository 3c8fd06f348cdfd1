"""Workload traces and request sets.

Reads Bitbrains-style per-VM trace files (11 delimited columns, header row),
samples request sets from a trace directory, generates deterministic
synthetic workloads, and reads/writes the request file format::

    # request <name> slots=<n> slot_s=<T>
    vm_id,d_vm_mhz,ram_kb,<n cpu values>,<n ram values>

Per-slot usage is the sampled ``cpu_usage_mhz`` held constant over the slot,
so a slot's VM energy is simply its usage value.
"""

import csv
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .errors import (
    InsufficientVMs,
    InvalidSpec,
    InvariantViolation,
    MalformedRow,
    MissingFile,
    ShortTrace,
)
from .rng import make_rng
from .utils import atomic_write_text

logger = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "timestamp_ms",
    "cpu_cores",
    "cpu_capacity_provisioned",
    "cpu_usage_pct",
    "cpu_usage_mhz",
    "mem_provisioned_kb",
    "mem_usage_kb",
    "disk_read_kbps",
    "disk_write_kbps",
    "net_rx_kbps",
    "net_tx_kbps",
)
CAPACITY_TOLERANCE = 0.01
DAY_SLOT_COUNT = 288
SLOT_SECONDS = 300.0


@dataclass(frozen=True)
class TraceRecord:
    """One sample of a VM trace (one row of a Bitbrains file)."""

    timestamp_ms: int
    cpu_cores: int
    cpu_capacity_provisioned: float
    cpu_usage_pct: float
    cpu_usage_mhz: float
    mem_provisioned_kb: float
    mem_usage_kb: float
    disk_read_kbps: float
    disk_write_kbps: float
    net_rx_kbps: float
    net_tx_kbps: float

    def __post_init__(self):
        for name in TRACE_COLUMNS[2:]:
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise InvariantViolation(f"{name} must be finite and non-negative, got {value}")
        if self.cpu_usage_pct > 100.0 * (1 + CAPACITY_TOLERANCE):
            raise InvariantViolation(f"cpu_usage_pct {self.cpu_usage_pct} exceeds 100%")
        limit = self.cpu_capacity_provisioned * (1 + CAPACITY_TOLERANCE)
        if self.cpu_usage_mhz > limit:
            raise InvariantViolation(
                f"cpu_usage_mhz {self.cpu_usage_mhz} exceeds provisioned capacity "
                f"{self.cpu_capacity_provisioned} beyond {CAPACITY_TOLERANCE:.0%} tolerance"
            )


@dataclass(frozen=True)
class VmProfile:
    """Declared demand and per-slot usage of one VM.

    Attributes:
        vm_id: Opaque identifier (no commas or whitespace)
        d_vm: Initial CPU demand in MHz
        ram_demand_kb: Provisioned memory in KB
        cpu_usage: CPU usage in MHz, one entry per slot
        ram_usage: Memory usage in KB, one entry per slot
    """

    vm_id: str
    d_vm: float
    ram_demand_kb: float
    cpu_usage: Tuple[float, ...]
    ram_usage: Tuple[float, ...]

    def __post_init__(self):
        if not self.vm_id or any(ch in self.vm_id for ch in ", \t\n"):
            raise InvariantViolation(f"Invalid vm_id {self.vm_id!r}")
        if not self.d_vm > 0:
            raise InvariantViolation(f"VM {self.vm_id}: d_vm must be positive, got {self.d_vm}")
        if len(self.cpu_usage) != len(self.ram_usage):
            raise InvariantViolation(
                f"VM {self.vm_id}: cpu_usage has {len(self.cpu_usage)} slots, "
                f"ram_usage has {len(self.ram_usage)}"
            )

    @property
    def slot_count(self) -> int:
        return len(self.cpu_usage)


@dataclass(frozen=True)
class RequestSet:
    """A named set of VM profiles sharing one slot grid."""

    name: str
    profiles: Tuple[VmProfile, ...]
    slot_length_s: float = SLOT_SECONDS
    slot_count: int = DAY_SLOT_COUNT

    def __post_init__(self):
        if not self.name or any(ch.isspace() for ch in self.name):
            raise InvariantViolation(f"Invalid request name {self.name!r}")
        if not self.slot_length_s > 0:
            raise InvariantViolation("slot_length_s must be positive")
        seen = set()
        for profile in self.profiles:
            if profile.slot_count != self.slot_count:
                raise InvariantViolation(
                    f"VM {profile.vm_id} has {profile.slot_count} slots, request has {self.slot_count}"
                )
            if profile.vm_id in seen:
                raise InvariantViolation(f"Duplicate vm_id {profile.vm_id}")
            seen.add(profile.vm_id)

    @cached_property
    def by_id(self) -> Dict[str, VmProfile]:
        return {profile.vm_id: profile for profile in self.profiles}

    @cached_property
    def vm_ids(self) -> Tuple[str, ...]:
        """VM ids in ascending order (the fixed summation order)."""
        return tuple(sorted(self.by_id))

    def __len__(self) -> int:
        return len(self.profiles)


class SynthSpec(BaseModel):
    """Parameters of a synthetic workload.

    ``constant`` holds ``baseline + amplitude``; ``square-wave`` is
    ``baseline + amplitude`` for the first ``round(duty * period)`` slots of
    each period and ``baseline`` otherwise; ``sinusoid-with-noise`` (alias
    ``sinusoid``) oscillates between ``baseline`` and ``baseline + amplitude``
    with Gaussian noise of standard deviation ``noise * amplitude``.
    """

    model_config = ConfigDict(frozen=True)

    vm_count: int
    slot_count: int
    pattern: Literal["constant", "square-wave", "sinusoid-with-noise"] = "constant"
    amplitude: float = 500.0
    period: int = 2
    seed: int = 0
    d_vm: float = 2000.0
    ram_kb: float = 4_194_304.0
    baseline: float = 0.0
    duty: float = 0.5
    noise: float = 0.1
    phase_jitter: bool = False
    # with phase_jitter: VMs share this many evenly spaced phases (0 = one per VM)
    phase_groups: int = 0
    slot_length_s: float = SLOT_SECONDS
    name: Optional[str] = None

    @field_validator("pattern", mode="before")
    @classmethod
    def _pattern_alias(cls, value):
        return "sinusoid-with-noise" if value == "sinusoid" else value


def _parse_row(row: Sequence[str], row_index: int) -> TraceRecord:
    fields = [cell.strip() for cell in row]
    if len(fields) != len(TRACE_COLUMNS):
        raise MalformedRow(row_index, f"expected {len(TRACE_COLUMNS)} columns, got {len(fields)}")
    values = []
    for name, cell in zip(TRACE_COLUMNS, fields):
        try:
            number = float(cell)
        except ValueError:
            raise MalformedRow(row_index, f"non-numeric {name}: {cell!r}") from None
        values.append(number)
    timestamp, cores = values[0], values[1]
    if not timestamp.is_integer() or not cores.is_integer():
        raise MalformedRow(row_index, "timestamp and cpu_cores must be integers")
    try:
        return TraceRecord(int(timestamp), int(cores), *values[2:])
    except InvariantViolation as exc:
        raise InvariantViolation(f"row {row_index}: {exc}") from None


def parse_trace_file(path: str | Path, delimiter: str = ";") -> List[TraceRecord]:
    """Parse one per-VM trace file.

    Args:
        path: Trace file with a header row and 11 columns in Bitbrains order
        delimiter: Field delimiter (``;`` by default, ``,`` accepted);
            whitespace around fields (Bitbrains uses ``;\\t``) is ignored

    Returns:
        One TraceRecord per data row, in file order

    Raises:
        MissingFile, MalformedRow, InvariantViolation
    """
    trace_path = Path(path)
    if not trace_path.is_file():
        raise MissingFile(str(trace_path))
    records: List[TraceRecord] = []
    row_index = 0
    with open(trace_path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle, delimiter=delimiter)
        try:
            next(reader, None)
            for row_index, row in enumerate(reader, start=1):
                if not row or all(not cell.strip() for cell in row):
                    continue
                records.append(_parse_row(row, row_index))
        except UnicodeDecodeError as exc:
            # decoding is buffered, so the index is the first row not yet parsed
            raise MalformedRow(row_index + 1, f"not valid UTF-8 ({exc.reason})") from None
    return records


def _profile_from_records(vm_id: str, window: Sequence[TraceRecord]) -> VmProfile:
    first = window[0]
    ram_demand = first.mem_provisioned_kb
    ram_usage = tuple(record.mem_usage_kb for record in window)
    if not any(ram_usage):
        # memory not reported: assume the provisioned amount is in use
        ram_usage = tuple(ram_demand for _ in window)
    return VmProfile(
        vm_id=vm_id,
        d_vm=first.cpu_capacity_provisioned,
        ram_demand_kb=ram_demand,
        cpu_usage=tuple(record.cpu_usage_mhz for record in window),
        ram_usage=ram_usage,
    )


def build_request(
    trace_dir: str | Path,
    vm_count: int,
    window_start: int = 0,
    seed: int = 0,
    slot_count: int = DAY_SLOT_COUNT,
    delimiter: str = ";",
    name: Optional[str] = None,
) -> RequestSet:
    """Sample a request set from a directory of per-VM trace files.

    VMs are drawn uniformly without replacement (a PCG64 permutation of the
    sorted file list). A drawn VM that does not cover
    ``window_start + slot_count`` samples, or reports no provisioned CPU, is
    replaced by the next VM of the permutation.

    Args:
        trace_dir: Directory of per-VM trace files (one VM per file)
        vm_count: Number of VMs to sample
        window_start: First sample index of the window
        seed: Sampling seed
        slot_count: Window length in slots (288 = one day at 5 minutes)
        delimiter: Trace field delimiter
        name: Request name (defaults to ``<dir>-<vm_count>-s<seed>``)

    Raises:
        MissingFile, InsufficientVMs, ShortTrace, MalformedRow, InvariantViolation
    """
    directory = Path(trace_dir)
    if not directory.is_dir():
        raise MissingFile(str(directory))
    if vm_count <= 0 or slot_count <= 0 or window_start < 0:
        raise InvalidSpec("vm_count and slot_count must be positive, window_start non-negative")
    files = sorted(p for p in directory.iterdir() if p.is_file() and not p.name.startswith("."))
    if len(files) < vm_count:
        raise InsufficientVMs(f"{directory} holds {len(files)} VM traces, {vm_count} requested")

    rng = make_rng(seed)
    order = rng.permutation(len(files))
    window_end = window_start + slot_count
    profiles: List[VmProfile] = []
    last_short: Optional[str] = None
    for index in order:
        if len(profiles) == vm_count:
            break
        trace_file = files[int(index)]
        vm_id = trace_file.stem
        records = parse_trace_file(trace_file, delimiter=delimiter)
        if len(records) < window_end:
            logger.warning(
                f"VM {vm_id} has {len(records)} samples, needs {window_end}; resampling"
            )
            last_short = vm_id
            continue
        window = records[window_start:window_end]
        if window[0].cpu_capacity_provisioned <= 0:
            logger.warning(f"VM {vm_id} reports no provisioned CPU; resampling")
            last_short = vm_id
            continue
        profiles.append(_profile_from_records(vm_id, window))

    if len(profiles) < vm_count:
        raise ShortTrace(
            last_short or "?",
            f"only {len(profiles)} of {vm_count} VMs cover slots {window_start}..{window_end - 1}",
        )
    profiles.sort(key=lambda profile: profile.vm_id)
    request_name = name or f"{directory.name}-{vm_count}-s{seed}"
    logger.info(f"Built request {request_name}: {vm_count} VMs, {slot_count} slots")
    return RequestSet(
        name=request_name,
        profiles=tuple(profiles),
        slot_length_s=SLOT_SECONDS,
        slot_count=slot_count,
    )


def _synth_series(spec: SynthSpec, rng: np.random.Generator, phase: int) -> np.ndarray:
    t = np.arange(spec.slot_count)
    if spec.pattern == "constant":
        series = np.full(spec.slot_count, spec.amplitude)
    elif spec.pattern == "square-wave":
        on_slots = max(1, int(round(spec.duty * spec.period)))
        series = np.where((t + phase) % spec.period < on_slots, spec.amplitude, 0.0)
    else:
        wave = 0.5 + 0.5 * np.sin(2.0 * np.pi * (t + phase) / spec.period)
        series = spec.amplitude * wave + rng.normal(0.0, spec.noise * spec.amplitude, spec.slot_count)
    return np.clip(spec.baseline + series, 0.0, spec.d_vm)


def synth_request(spec: SynthSpec) -> RequestSet:
    """Generate a reproducible synthetic request.

    Raises:
        InvalidSpec: on non-positive counts or a load exceeding d_vm
    """
    if spec.vm_count <= 0 or spec.slot_count <= 0 or spec.period <= 0:
        raise InvalidSpec("vm_count, slot_count and period must be positive")
    if spec.amplitude < 0 or spec.baseline < 0:
        raise InvalidSpec("amplitude and baseline must be non-negative")
    if spec.baseline + spec.amplitude > spec.d_vm:
        raise InvalidSpec(
            f"baseline + amplitude ({spec.baseline + spec.amplitude}) exceeds d_vm ({spec.d_vm})"
        )
    if not 0 < spec.duty <= 1:
        raise InvalidSpec("duty must lie in (0, 1]")
    if spec.phase_groups < 0:
        raise InvalidSpec("phase_groups must be non-negative")

    rng = make_rng(spec.seed)
    group_phases: List[int] = []
    if spec.phase_jitter and spec.phase_groups:
        offset = int(rng.integers(spec.period))
        group_phases = [
            (offset + g * spec.period // spec.phase_groups) % spec.period for g in range(spec.phase_groups)
        ]
    width = len(str(spec.vm_count - 1))
    profiles = []
    for i in range(spec.vm_count):
        if group_phases:
            phase = group_phases[i % len(group_phases)]
        else:
            phase = int(rng.integers(spec.period)) if spec.phase_jitter else 0
        cpu = _synth_series(spec, rng, phase)
        ram_fraction = float(rng.uniform(0.2, 0.8))
        profiles.append(
            VmProfile(
                vm_id=f"vm{i:0{width}d}",
                d_vm=spec.d_vm,
                ram_demand_kb=spec.ram_kb,
                cpu_usage=tuple(float(x) for x in cpu),
                ram_usage=tuple(spec.ram_kb * ram_fraction for _ in range(spec.slot_count)),
            )
        )
    name = spec.name or f"synth-{spec.pattern}-{spec.vm_count}x{spec.slot_count}-s{spec.seed}"
    return RequestSet(
        name=name,
        profiles=tuple(profiles),
        slot_length_s=spec.slot_length_s,
        slot_count=spec.slot_count,
    )


def spike_benchmark(seed: int = 0, vm_count: int = 50, slot_count: int = DAY_SLOT_COUNT) -> RequestSet:
    """Synthetic spike workload used for the desk-scale method comparison.

    Each VM idles at a baseline and spikes for 20% of a 24-slot (2 hour)
    period. VMs fall into four phase groups spaced a quarter period apart,
    so a group's spike lands on its hosts all at once and windows never
    overlap.
    """
    spec = SynthSpec(
        vm_count=vm_count,
        slot_count=slot_count,
        pattern="square-wave",
        amplitude=1500.0,
        baseline=300.0,
        d_vm=2000.0,
        period=24,
        duty=0.2,
        phase_jitter=True,
        phase_groups=4,
        seed=seed,
        name=f"spike-{vm_count}x{slot_count}-s{seed}",
    )
    return synth_request(spec)


def format_request(request: RequestSet) -> str:
    """Render a request in the request file format."""
    lines = [
        f"# request {request.name} slots={request.slot_count} slot_s={request.slot_length_s!r}"
    ]
    for profile in request.profiles:
        cells = [profile.vm_id, repr(float(profile.d_vm)), repr(float(profile.ram_demand_kb))]
        cells.extend(repr(float(x)) for x in profile.cpu_usage)
        cells.extend(repr(float(x)) for x in profile.ram_usage)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_request_file(request: RequestSet, path: str | Path) -> Path:
    """Write a request file atomically."""
    return atomic_write_text(path, format_request(request))


def _parse_header(line: str) -> Tuple[str, int, float]:
    parts = line.split()
    if len(parts) != 5 or parts[:2] != ["#", "request"]:
        raise MalformedRow(0, f"bad request header: {line!r}")
    options = dict(part.split("=", 1) for part in parts[3:] if "=" in part)
    try:
        return parts[2], int(options["slots"]), float(options["slot_s"])
    except (KeyError, ValueError):
        raise MalformedRow(0, f"bad request header: {line!r}") from None


def read_request_file(path: str | Path) -> RequestSet:
    """Read a request file written by :func:`write_request_file`."""
    request_path = Path(path)
    if not request_path.is_file():
        raise MissingFile(str(request_path))
    try:
        lines = request_path.read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise MalformedRow(0, f"not valid UTF-8 ({exc.reason})") from None
    if not lines:
        raise MalformedRow(0, "empty request file")
    name, slot_count, slot_s = _parse_header(lines[0])
    expected = 3 + 2 * slot_count
    profiles = []
    for row_index, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != expected:
            raise MalformedRow(row_index, f"expected {expected} columns, got {len(cells)}")
        try:
            numbers = [float(cell) for cell in cells[1:]]
        except ValueError as exc:
            raise MalformedRow(row_index, str(exc)) from None
        profiles.append(
            VmProfile(
                vm_id=cells[0],
                d_vm=numbers[0],
                ram_demand_kb=numbers[1],
                cpu_usage=tuple(numbers[2 : 2 + slot_count]),
                ram_usage=tuple(numbers[2 + slot_count :]),
            )
        )
    return RequestSet(name=name, profiles=tuple(profiles), slot_length_s=slot_s, slot_count=slot_count)
