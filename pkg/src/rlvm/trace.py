"""Workload traces and request sets.

Requests are the unit of simulation: a fixed set of VMs, each with a
declared CPU demand and one CPU/RAM usage sample per slot. They come
from Bitbrains-style per-VM trace files (:func:`build_request`) or from
the deterministic generator :func:`synth_request`, and are stored on
disk in a small line-oriented text format (:func:`write_request`,
:func:`read_request`).

Trace columns, in the default file order::

    Timestamp [ms]; CPU cores; CPU capacity provisioned [MHZ];
    CPU usage [%]; CPU usage [MHZ]; Memory capacity provisioned [KB];
    Memory usage [KB]; Disk read throughput [KB/s];
    Disk write throughput [KB/s]; Network received throughput [KB/s];
    Network transmitted throughput [KB/s]

The public Bitbrains dump lists the two CPU usage columns the other way
round; the header decides which order a file uses.
"""

import logging
import math
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (InsufficientVMs, InvalidSpec, InvariantViolation,
                     MalformedRow, MissingFile, ShortTrace, DataError)
from .files import atomic_write
from .rng import make_rng

log = logging.getLogger(__name__)

SLOTS_PER_DAY = 288
SLOT_SECONDS = 300.0
CAPACITY_TOLERANCE = 0.01
N_COLUMNS = 11


@dataclass(frozen=True)
class TraceRecord:
    timestamp_ms: int
    cpu_cores: int
    cpu_capacity_provisioned: float
    cpu_usage_mhz: float
    cpu_usage_pct: float
    mem_provisioned_kb: float
    mem_usage_kb: float | None
    disk_read_kbps: float
    disk_write_kbps: float
    net_rx_kbps: float
    net_tx_kbps: float

    def check(self):
        rates = [self.cpu_capacity_provisioned, self.cpu_usage_mhz, self.cpu_usage_pct,
                 self.mem_provisioned_kb, self.disk_read_kbps, self.disk_write_kbps,
                 self.net_rx_kbps, self.net_tx_kbps]
        if self.mem_usage_kb is not None:
            rates.append(self.mem_usage_kb)
        if not all(math.isfinite(v) and v >= 0 for v in rates):
            raise InvariantViolation(f"negative or non-finite field in record at {self.timestamp_ms}")
        limit = self.cpu_capacity_provisioned * (1 + CAPACITY_TOLERANCE)
        if self.cpu_usage_mhz > limit:
            raise InvariantViolation(
                f"cpu usage {self.cpu_usage_mhz} MHz exceeds provisioned "
                f"{self.cpu_capacity_provisioned} MHz at {self.timestamp_ms}")


def _number(text, row, name):
    try:
        return float(text)
    except ValueError:
        raise MalformedRow(row, f"non-numeric {name}: {text!r}") from None


def _integer(text, row, name):
    value = _number(text, row, name)
    if not value.is_integer():
        raise MalformedRow(row, f"{name} is not an integer: {text!r}")
    return int(value)


def _usage_columns(header, delimiter):
    """Indices of the (MHz, percent) CPU usage columns."""
    cols = [c.strip().lower() for c in header.split(delimiter)]
    if len(cols) == N_COLUMNS and "mhz" in cols[3] and "%" in cols[4]:
        return 3, 4
    return 4, 3


def parse_trace_file(path, delimiter=";"):
    """Parse one per-VM trace file into a list of :class:`TraceRecord`.

    The first non-blank line is the header. If it labels the MHz usage
    column before the percent column the two are read in that order,
    otherwise percent comes first. Fields may be padded with whitespace
    (the public Bitbrains dump uses ``";\\t"``). An empty memory-usage
    field is accepted and stored as ``None``.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"trace file not found: {path}")
    records = []
    with path.open() as fh:
        lines = (line for line in fh if line.strip())
        header = next(lines, None)
        if header is None:
            return records
        mhz_col, pct_col = _usage_columns(header, delimiter)
        for row, line in enumerate(lines, start=1):
            cols = [c.strip() for c in line.rstrip("\r\n").split(delimiter)]
            if len(cols) != N_COLUMNS:
                raise MalformedRow(row, f"expected {N_COLUMNS} columns, got {len(cols)}")
            rec = TraceRecord(
                timestamp_ms=_integer(cols[0], row, "timestamp"),
                cpu_cores=_integer(cols[1], row, "cpu cores"),
                cpu_capacity_provisioned=_number(cols[2], row, "cpu capacity"),
                cpu_usage_mhz=_number(cols[mhz_col], row, "cpu usage [MHz]"),
                cpu_usage_pct=_number(cols[pct_col], row, "cpu usage [%]"),
                mem_provisioned_kb=_number(cols[5], row, "memory capacity"),
                mem_usage_kb=_number(cols[6], row, "memory usage") if cols[6] else None,
                disk_read_kbps=_number(cols[7], row, "disk read"),
                disk_write_kbps=_number(cols[8], row, "disk write"),
                net_rx_kbps=_number(cols[9], row, "network rx"),
                net_tx_kbps=_number(cols[10], row, "network tx"),
            )
            rec.check()
            records.append(rec)
    return records


@dataclass(frozen=True, eq=False)
class VmProfile:
    """Declared demand plus per-slot usage of one VM.

    ``d_vm`` is the initial CPU demand in MHz; ``cpu_usage`` (MHz) and
    ``ram_usage`` (KB) hold one sample per slot, held constant over it.
    """

    vm_id: str
    d_vm: float
    ram_demand_kb: float
    cpu_usage: np.ndarray
    ram_usage: np.ndarray

    def __post_init__(self):
        cpu = np.asarray(self.cpu_usage, dtype=float)
        ram = np.asarray(self.ram_usage, dtype=float)
        cpu.flags.writeable = False
        ram.flags.writeable = False
        object.__setattr__(self, "cpu_usage", cpu)
        object.__setattr__(self, "ram_usage", ram)
        object.__setattr__(self, "d_vm", float(self.d_vm))
        object.__setattr__(self, "ram_demand_kb", float(self.ram_demand_kb))
        if not self.d_vm > 0:
            raise InvalidSpec(f"VM {self.vm_id!r}: d_vm must be positive")
        if cpu.ndim != 1 or cpu.shape != ram.shape:
            raise InvalidSpec(f"VM {self.vm_id!r}: cpu and ram series differ in length")
        if not (np.all(np.isfinite(cpu)) and np.all(np.isfinite(ram))):
            raise InvalidSpec(f"VM {self.vm_id!r}: non-finite usage")

    @property
    def slot_count(self):
        return len(self.cpu_usage)

    def __eq__(self, other):
        if not isinstance(other, VmProfile):
            return NotImplemented
        return (self.vm_id == other.vm_id and self.d_vm == other.d_vm
                and self.ram_demand_kb == other.ram_demand_kb
                and np.array_equal(self.cpu_usage, other.cpu_usage)
                and np.array_equal(self.ram_usage, other.ram_usage))

    __hash__ = None


@dataclass(frozen=True)
class RequestSet:
    name: str
    profiles: tuple
    slot_length_s: float = SLOT_SECONDS
    slot_count: int = SLOTS_PER_DAY

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if not self.slot_length_s > 0:
            raise InvalidSpec("slot_length_s must be positive")
        for p in self.profiles:
            if p.slot_count != self.slot_count:
                raise InvalidSpec(f"VM {p.vm_id!r} has {p.slot_count} slots, "
                                  f"request has {self.slot_count}")
        ids = [p.vm_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise InvalidSpec("duplicate vm_id in request")

    def __len__(self):
        return len(self.profiles)

    # Dense views used by the simulator; rows follow profile order.
    @cached_property
    def cpu(self):
        return _frozen(np.array([p.cpu_usage for p in self.profiles]).reshape(len(self), self.slot_count))

    @cached_property
    def ram(self):
        return _frozen(np.array([p.ram_usage for p in self.profiles]).reshape(len(self), self.slot_count))

    @cached_property
    def d_vm(self):
        return _frozen(np.array([p.d_vm for p in self.profiles], dtype=float))

    @cached_property
    def ram_demand(self):
        return _frozen(np.array([p.ram_demand_kb for p in self.profiles], dtype=float))

    @property
    def vm_ids(self):
        return [p.vm_id for p in self.profiles]


def _frozen(a):
    a.flags.writeable = False
    return a


def _vm_from_records(vm_id, records):
    first = records[0]
    cpu = [r.cpu_usage_mhz for r in records]
    ram = [first.mem_provisioned_kb if r.mem_usage_kb is None else r.mem_usage_kb
           for r in records]
    return VmProfile(vm_id=vm_id, d_vm=first.cpu_capacity_provisioned,
                     ram_demand_kb=first.mem_provisioned_kb,
                     cpu_usage=cpu, ram_usage=ram)


def build_request(trace_dir, vm_count, window_start=0, seed=0, *,
                  slot_count=SLOTS_PER_DAY, delimiter=";", name=None):
    """Sample ``vm_count`` VMs from a directory of per-VM trace files.

    Files are drawn uniformly without replacement in a seeded order. A
    candidate whose trace is too short for the window, or whose window
    contains invalid records, is replaced by the next candidate.
    """
    trace_dir = Path(trace_dir)
    if not trace_dir.is_dir():
        raise MissingFile(f"trace directory not found: {trace_dir}")
    if vm_count <= 0 or slot_count <= 0 or window_start < 0:
        raise InvalidSpec("vm_count and slot_count must be positive, window_start non-negative")
    files = sorted(p for p in trace_dir.iterdir() if p.is_file() and not p.name.startswith("."))
    if len(files) < vm_count:
        raise InsufficientVMs(f"{trace_dir} holds {len(files)} traces, {vm_count} requested")

    order = make_rng(seed).permutation(len(files))
    profiles = []
    last_short = None
    for idx in order:
        path = files[idx]
        vm_id = path.stem
        try:
            records = parse_trace_file(path, delimiter=delimiter)
        except InvariantViolation as exc:
            log.warning("skipping %s: %s", path.name, exc)
            continue
        window = records[window_start:window_start + slot_count]
        if len(window) < slot_count:
            last_short = ShortTrace(vm_id, len(window), slot_count)
            continue
        profiles.append(_vm_from_records(vm_id, window))
        if len(profiles) == vm_count:
            break
    if len(profiles) < vm_count:
        if last_short is not None:
            raise last_short
        raise InsufficientVMs(f"only {len(profiles)} usable traces in {trace_dir}")
    profiles.sort(key=lambda p: p.vm_id)
    return RequestSet(name=name or f"bitbrains-{vm_count}-s{seed}", profiles=profiles,
                      slot_length_s=SLOT_SECONDS, slot_count=slot_count)


PATTERNS = ("constant", "square-wave", "sinusoid-with-noise")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic request.

    ``amplitude`` is the swing above ``baseline`` (MHz). For square waves
    a VM is "on" for ``round(duty * period)`` slots of every period; with
    ``jitter`` each VM gets a random phase and a RAM size scaled by a
    factor in [0.5, 1.5).
    """

    vm_count: int
    slot_count: int
    pattern: str = "constant"
    amplitude: float = 500.0
    period: int = 2
    seed: int = 0
    d_vm: float | None = None
    duty: float = 0.5
    baseline: float = 0.0
    noise: float = 0.1
    ram_kb: float = 4_194_304.0
    jitter: bool = False
    name: str | None = None

    def demand(self):
        if self.d_vm is not None:
            return float(self.d_vm)
        peak = self.baseline + self.amplitude
        return peak if peak > 0 else 1000.0


def synth_request(spec):
    """Generate a reproducible :class:`RequestSet` from a :class:`SynthSpec`."""
    if spec.vm_count <= 0 or spec.slot_count <= 0:
        raise InvalidSpec("vm_count and slot_count must be positive")
    if spec.pattern not in PATTERNS:
        raise InvalidSpec(f"unknown pattern {spec.pattern!r}; expected one of {PATTERNS}")
    if spec.amplitude < 0 or spec.baseline < 0:
        raise InvalidSpec("amplitude and baseline must be non-negative")
    if spec.pattern != "constant" and spec.period <= 0:
        raise InvalidSpec("period must be positive")
    if not 0 < spec.duty <= 1:
        raise InvalidSpec("duty must be in (0, 1]")
    d_vm = spec.demand()
    if spec.baseline + spec.amplitude > d_vm:
        raise InvalidSpec(f"baseline + amplitude exceeds d_vm={d_vm}")

    rng = make_rng(spec.seed)
    n, s = spec.vm_count, spec.slot_count
    t = np.arange(s)
    if spec.jitter:
        phase = rng.integers(0, max(spec.period, 1), size=n)
        ram_demand = spec.ram_kb * rng.uniform(0.5, 1.5, size=n)
    else:
        phase = np.zeros(n, dtype=np.int64)
        ram_demand = np.full(n, spec.ram_kb)

    if spec.pattern == "constant":
        cpu = np.full((n, s), spec.baseline + spec.amplitude)
    elif spec.pattern == "square-wave":
        on_len = max(1, int(round(spec.duty * spec.period)))
        on = ((t[None, :] + phase[:, None]) % spec.period) < on_len
        cpu = spec.baseline + spec.amplitude * on
    else:
        angle = 2 * np.pi * (t[None, :] + phase[:, None]) / spec.period
        cpu = spec.baseline + spec.amplitude * (0.5 + 0.5 * np.sin(angle))
        cpu = cpu + spec.noise * spec.amplitude * rng.standard_normal((n, s))
        cpu = np.clip(cpu, 0.0, d_vm)
    # Resident memory tracks CPU activity between 30% and 100% of the demand.
    ram = ram_demand[:, None] * (0.3 + 0.7 * cpu / d_vm)

    width = max(4, len(str(n - 1)))
    profiles = [VmProfile(vm_id=f"vm{i:0{width}d}", d_vm=d_vm, ram_demand_kb=ram_demand[i],
                          cpu_usage=cpu[i], ram_usage=ram[i]) for i in range(n)]
    name = spec.name or f"synth-{spec.pattern}-{n}x{s}-s{spec.seed}"
    return RequestSet(name=name, profiles=profiles, slot_length_s=SLOT_SECONDS, slot_count=s)


def spike_benchmark(seed=0, vm_count=50, slot_count=SLOTS_PER_DAY):
    """The square-wave spike workload used for the method comparison.

    Each VM idles at 25% of a 2000 MHz demand and bursts to 100% for 20%
    of a 20-slot period, with a random per-VM phase.
    """
    return synth_request(SynthSpec(
        vm_count=vm_count, slot_count=slot_count, pattern="square-wave",
        amplitude=1500.0, baseline=500.0, d_vm=2000.0, period=20, duty=0.2,
        seed=seed, jitter=True, name=f"spike{vm_count}-s{seed}"))


_HEADER = re.compile(r"^# request (\S+) slots=(\d+) slot_s=(\S+)$")


def _fmt(x):
    return repr(float(x))


def dumps_request(request):
    lines = [f"# request {request.name} slots={request.slot_count} slot_s={_fmt(request.slot_length_s)}"]
    for p in request.profiles:
        fields = [p.vm_id, _fmt(p.d_vm), _fmt(p.ram_demand_kb)]
        fields += [_fmt(v) for v in p.cpu_usage]
        fields += [_fmt(v) for v in p.ram_usage]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def write_request(request, path):
    """Write ``request`` to ``path`` atomically."""
    if re.search(r"\s", request.name) or any("," in p.vm_id for p in request.profiles):
        raise InvalidSpec("request name must not contain whitespace and vm ids must not contain ','")
    atomic_write(path, dumps_request(request))


def loads_request(text):
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise DataError("empty request file")
    m = _HEADER.match(lines[0].strip())
    if not m:
        raise MalformedRow(0, "bad request header")
    name, slots, slot_s = m.group(1), int(m.group(2)), float(m.group(3))
    profiles = []
    for row, line in enumerate(lines[1:], start=1):
        cols = line.strip().split(",")
        if len(cols) != 3 + 2 * slots:
            raise MalformedRow(row, f"expected {3 + 2 * slots} fields, got {len(cols)}")
        try:
            values = [float(c) for c in cols[1:]]
        except ValueError as exc:
            raise MalformedRow(row, str(exc)) from None
        profiles.append(VmProfile(vm_id=cols[0], d_vm=values[0], ram_demand_kb=values[1],
                                  cpu_usage=values[2:2 + slots], ram_usage=values[2 + slots:]))
    return RequestSet(name=name, profiles=profiles, slot_length_s=slot_s, slot_count=slots)


def read_request(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"request file not found: {path}")
    return loads_request(path.read_text())
