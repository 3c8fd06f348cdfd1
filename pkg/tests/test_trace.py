"""Tests for trace parsing, request sampling and synthetic workloads."""

import numpy as np
import pytest

from rlvm.errors import (
    InsufficientVMs,
    InvalidSpec,
    InvariantViolation,
    MalformedRow,
    MissingFile,
)
from rlvm.trace import (
    SynthSpec,
    build_request,
    parse_trace_file,
    read_request_file,
    spike_benchmark,
    synth_request,
    write_request_file,
)

HEADER = (
    "Timestamp [ms];CPU cores;CPU capacity provisioned [MHZ];CPU usage [%];CPU usage [MHZ];"
    "Memory capacity provisioned [KB];Memory usage [KB];Disk read throughput [KB/s];"
    "Disk write throughput [KB/s];Network received throughput [KB/s];Network transmitted throughput [KB/s]"
)
SAMPLE_ROW = "1376322046;4;11703.99824;0.55;64.37199032;6.7108864E7;0.0;0.0;1.4;0.0;1.0"


def write_trace(path, rows):
    path.write_text("\n".join([HEADER, *rows]) + "\n", encoding="utf-8")
    return path


def trace_rows(count, usage=100.0, capacity=2000.0, mem=512.0):
    return [
        f"{1000 + 300000 * i};2;{capacity};5.0;{usage + i};4194304;{mem};0;0;0;0"
        for i in range(count)
    ]


def test_parse_sample_row(tmp_path):
    """The sample record maps onto the named columns."""
    records = parse_trace_file(write_trace(tmp_path / "vm1.csv", [SAMPLE_ROW]))
    assert len(records) == 1
    record = records[0]
    assert record.timestamp_ms == 1376322046
    assert record.cpu_cores == 4
    assert record.cpu_capacity_provisioned == pytest.approx(11703.99824)
    assert record.cpu_usage_mhz == pytest.approx(64.37199032)
    assert record.mem_provisioned_kb == pytest.approx(6.7108864e7)
    assert record.net_tx_kbps == 1.0


def test_parse_tab_padded_fields(tmp_path):
    """Whitespace after the delimiter is ignored."""
    row = SAMPLE_ROW.replace(";", ";\t")
    records = parse_trace_file(write_trace(tmp_path / "vm1.csv", [row]))
    assert records[0].cpu_usage_mhz == pytest.approx(64.37199032)


def test_parse_header_only(tmp_path):
    assert parse_trace_file(write_trace(tmp_path / "vm1.csv", [])) == []


def test_parse_wrong_column_count(tmp_path):
    row = ";".join(SAMPLE_ROW.split(";")[:10])
    with pytest.raises(MalformedRow) as excinfo:
        parse_trace_file(write_trace(tmp_path / "vm1.csv", [SAMPLE_ROW, row]))
    assert excinfo.value.row_index == 2


def test_parse_non_numeric(tmp_path):
    row = SAMPLE_ROW.replace("64.37199032", "abc")
    with pytest.raises(MalformedRow):
        parse_trace_file(write_trace(tmp_path / "vm1.csv", [row]))


def test_parse_usage_above_capacity(tmp_path):
    """Usage beyond provisioned capacity plus 1% is rejected."""
    row = "1;1;1000.0;100;1011.0;1;0;0;0;0;0"
    with pytest.raises(InvariantViolation):
        parse_trace_file(write_trace(tmp_path / "vm1.csv", [row]))
    within = "1;1;1000.0;100;1009.0;1;0;0;0;0;0"
    assert parse_trace_file(write_trace(tmp_path / "vm2.csv", [within]))[0].cpu_usage_mhz == 1009.0


def test_parse_percent_above_hundred(tmp_path):
    row = "1;1;1000.0;150.0;500.0;1;0;0;0;0;0"
    with pytest.raises(InvariantViolation):
        parse_trace_file(write_trace(tmp_path / "vm1.csv", [row]))


def test_parse_invalid_utf8(tmp_path):
    path = tmp_path / "vm1.csv"
    path.write_bytes((HEADER + "\n" + SAMPLE_ROW + "\n").encode("utf-8") + b"\xff;1;2\n")
    with pytest.raises(MalformedRow):
        parse_trace_file(path)


def test_read_request_invalid_utf8(tmp_path):
    path = tmp_path / "req.txt"
    path.write_bytes(b"# request r slots=1 slot_s=300.0\nvm\xff,1,1,1,1\n")
    with pytest.raises(MalformedRow):
        read_request_file(path)


def test_parse_missing_file(tmp_path):
    with pytest.raises(MissingFile):
        parse_trace_file(tmp_path / "nope.csv")


@pytest.fixture
def trace_dir(tmp_path):
    directory = tmp_path / "traces"
    directory.mkdir()
    for i in range(6):
        write_trace(directory / f"{i + 1}.csv", trace_rows(12, usage=100.0 * (i + 1)))
    return directory


def test_build_request_shape(trace_dir):
    request = build_request(trace_dir, 4, window_start=2, seed=7, slot_count=8)
    assert len(request) == 4
    assert request.slot_count == 8
    assert request.slot_length_s == 300.0
    assert list(request.vm_ids) == sorted(request.vm_ids)
    profile = request.profiles[0]
    assert profile.d_vm == 2000.0
    assert profile.ram_demand_kb == 4194304.0
    base = 100.0 * int(profile.vm_id)
    assert profile.cpu_usage[0] == pytest.approx(base + 2)


def test_build_request_deterministic(trace_dir, tmp_path):
    first = build_request(trace_dir, 3, seed=11, slot_count=10)
    second = build_request(trace_dir, 3, seed=11, slot_count=10)
    assert first == second
    a = write_request_file(first, tmp_path / "a.txt").read_bytes()
    b = write_request_file(second, tmp_path / "b.txt").read_bytes()
    assert a == b


def test_build_request_resamples_short_trace(trace_dir):
    """A VM without enough samples is replaced by another one."""
    write_trace(trace_dir / "7.csv", trace_rows(3))
    request = build_request(trace_dir, 6, seed=3, slot_count=10)
    assert "7" not in request.vm_ids
    assert len(request) == 6


def test_build_request_insufficient_vms(trace_dir):
    with pytest.raises(InsufficientVMs):
        build_request(trace_dir, 50, slot_count=10)


def test_build_request_zero_memory_falls_back(tmp_path):
    directory = tmp_path / "traces"
    directory.mkdir()
    write_trace(directory / "1.csv", trace_rows(4, mem=0.0))
    request = build_request(directory, 1, slot_count=4)
    assert request.profiles[0].ram_usage == (4194304.0,) * 4


def test_synth_constant():
    request = synth_request(SynthSpec(vm_count=3, slot_count=4, pattern="constant", amplitude=500))
    assert len(request) == 3
    for profile in request.profiles:
        assert profile.cpu_usage == (500.0, 500.0, 500.0, 500.0)


def test_synth_square_wave():
    request = synth_request(
        SynthSpec(vm_count=1, slot_count=6, pattern="square-wave", amplitude=1000, period=2)
    )
    assert request.profiles[0].cpu_usage == (1000.0, 0.0, 1000.0, 0.0, 1000.0, 0.0)


def test_synth_sinusoid_deterministic():
    spec = SynthSpec(vm_count=2, slot_count=16, pattern="sinusoid", amplitude=800, period=8, seed=5)
    assert synth_request(spec) == synth_request(spec)


def test_synth_invalid_spec():
    with pytest.raises(InvalidSpec):
        synth_request(SynthSpec(vm_count=0, slot_count=4))
    with pytest.raises(InvalidSpec):
        synth_request(SynthSpec(vm_count=1, slot_count=4, amplitude=5000))


def test_synth_profiles_valid_over_random_specs():
    """Every generated profile has the requested length and positive demand."""
    rng = np.random.default_rng(0)
    patterns = ["constant", "square-wave", "sinusoid"]
    for _ in range(30):
        spec = SynthSpec(
            vm_count=int(rng.integers(1, 6)),
            slot_count=int(rng.integers(1, 20)),
            pattern=patterns[int(rng.integers(3))],
            amplitude=float(rng.uniform(0, 1500)),
            period=int(rng.integers(1, 10)),
            seed=int(rng.integers(1000)),
        )
        request = synth_request(spec)
        for profile in request.profiles:
            assert len(profile.cpu_usage) == spec.slot_count
            assert len(profile.ram_usage) == spec.slot_count
            assert profile.d_vm > 0
            assert min(profile.cpu_usage) >= 0


def test_spike_benchmark_shape():
    request = spike_benchmark(seed=0)
    assert len(request) == 50
    assert request.slot_count == 288
    usage = request.profiles[0].cpu_usage
    assert sum(1 for u in usage if u > 300.0) == 288 // 24 * round(0.2 * 24)


def test_spike_benchmark_groups_spike_together():
    request = spike_benchmark(seed=3)
    usage = np.array([profile.cpu_usage for profile in request.profiles])
    assert np.array_equal(usage[0], usage[4])
    for t in range(request.slot_count):
        groups = {i % 4 for i in np.flatnonzero(usage[:, t] > 300.0)}
        assert len(groups) <= 1


def test_synth_sinusoid_alias():
    alias = SynthSpec(vm_count=2, slot_count=8, pattern="sinusoid", amplitude=800, period=4, seed=1)
    canonical = alias.model_copy(update={"pattern": "sinusoid-with-noise"})
    assert alias.pattern == "sinusoid-with-noise"
    assert synth_request(alias) == synth_request(canonical)


def test_request_file_round_trip(tmp_path):
    request = synth_request(
        SynthSpec(vm_count=3, slot_count=5, pattern="sinusoid", amplitude=700, period=4, seed=2)
    )
    path = write_request_file(request, tmp_path / "req.txt")
    assert path.read_text().startswith(f"# request {request.name} slots=5 slot_s=300.0\n")
    assert read_request_file(path) == request


def test_read_request_bad_row(tmp_path):
    path = tmp_path / "req.txt"
    path.write_text("# request r slots=2 slot_s=300.0\nvm0,1000,10,1,2,3\n")
    with pytest.raises(MalformedRow):
        read_request_file(path)
