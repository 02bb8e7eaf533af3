"""Data-center state and the per-slot energy/SLA accounting.

Energy is measured in MHz-slots: the slot length is normalised to 1, so
a VM's energy in a slot equals its CPU usage sample for that slot.
Per slot the cluster consumes

    EC = EC_host + MC + SLAVC

where EC_host sums ``base + VM usage`` over active hosts, MC charges 10%
of the usage of every VM that actually migrated, and SLAVC charges
``c_slav`` times the summed demand of the VMs on every host whose usage
reached its capacity.

VMs are referred to by their row index in the request.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ConstraintViolation, SlotOutOfRange

MIGRATION_OVERHEAD = 0.10
TARGET_UTILIZATION = 0.7


@dataclass(frozen=True)
class HostSpec:
    host_id: int
    capacity_mhz: float
    base_power: float
    bandwidth_kbps: float

    def __post_init__(self):
        if not (self.capacity_mhz > 0 and self.base_power >= 0 and self.bandwidth_kbps > 0):
            raise ConfigError(f"invalid host spec {self}")


@dataclass(frozen=True)
class ClusterConfig:
    """Fleet and penalty settings.

    ``host_count=None`` sizes the fleet so it would run at 70%: of the
    summed provisioned demand with ``sizing="demand"``, of the mean summed
    usage over the day with ``sizing="usage"``. ``base_power=None`` means
    0.3 x capacity per slot.
    ``init_fill`` caps host utilisation when the first placement is
    packed from slot-0 usage.
    """

    host_count: int | None = None
    capacity_mhz: float = 11704.0
    base_power: float | None = None
    bandwidth_kbps: float = 100_000.0
    slav_penalty_ratio: float = 0.5
    seed: int = 0
    init_fill: float = 0.7
    sizing: str = "demand"

    KEYS = {
        "hosts.count": ("host_count", int),
        "hosts.sizing": ("sizing", str),
        "hosts.capacity_mhz": ("capacity_mhz", float),
        "hosts.base_power": ("base_power", float),
        "hosts.bandwidth_kbps": ("bandwidth_kbps", float),
        "slav.penalty_ratio": ("slav_penalty_ratio", float),
        "sim.seed": ("seed", int),
        "init.fill": ("init_fill", float),
    }

    def __post_init__(self):
        if not 0 <= self.slav_penalty_ratio <= 1:
            raise ConfigError("slav.penalty_ratio must lie in [0, 1]")
        if self.host_count is not None and self.host_count <= 0:
            raise ConfigError("hosts.count must be positive")
        if not 0 < self.init_fill <= 1:
            raise ConfigError("init.fill must lie in (0, 1]")
        if self.sizing not in ("demand", "usage"):
            raise ConfigError("hosts.sizing must be 'demand' or 'usage'")

    @classmethod
    def from_mapping(cls, values):
        kwargs = {}
        for key, (attr, conv) in cls.KEYS.items():
            if key in values:
                try:
                    kwargs[attr] = conv(values[key])
                except ValueError:
                    raise ConfigError(f"bad value for {key}: {values[key]!r}") from None
        return cls(**kwargs)

    @property
    def base(self):
        return 0.3 * self.capacity_mhz if self.base_power is None else self.base_power


def load_kv(path):
    """Read a flat ``key = value`` file (``:`` also accepted, ``#`` comments)."""
    values = {}
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            m = next((i for i, ch in enumerate(line) if ch in "=:"), None)
            if m is None:
                raise ConfigError(f"{path}:{n}: expected 'key = value'")
            values[line[:m].strip()] = line[m + 1:].strip()
    return values


def make_hosts(request, config):
    if config.host_count is not None:
        m = config.host_count
    elif config.sizing == "usage":
        load = float(np.mean(request.cpu.sum(axis=0))) if len(request) else 0.0
        m = max(1, math.ceil(load / (TARGET_UTILIZATION * config.capacity_mhz)))
    else:
        demand = float(np.mean(request.d_vm)) if len(request) else 0.0
        m = max(1, math.ceil(len(request) * demand / (TARGET_UTILIZATION * config.capacity_mhz)))
    return tuple(HostSpec(j, config.capacity_mhz, config.base, config.bandwidth_kbps)
                 for j in range(m))


@dataclass(frozen=True, eq=False)
class Placement:
    """Assignment of every VM (by index) to exactly one host."""

    host_of: np.ndarray
    n_hosts: int

    def __post_init__(self):
        a = np.array(self.host_of, dtype=np.int64)
        if a.ndim != 1:
            raise ConstraintViolation("placement must be one host per VM")
        if len(a) and (a.min() < 0 or a.max() >= self.n_hosts):
            raise ConstraintViolation("placement references a non-existent host")
        a.flags.writeable = False
        object.__setattr__(self, "host_of", a)

    def members(self, j):
        return np.flatnonzero(self.host_of == j)

    def counts(self):
        return np.bincount(self.host_of, minlength=self.n_hosts)

    def assignment(self, vm_ids=None):
        ids = vm_ids if vm_ids is not None else range(len(self.host_of))
        return {vm: int(h) for vm, h in zip(ids, self.host_of)}

    def moved(self, vm, host):
        a = self.host_of.copy()
        a[vm] = host
        return Placement(a, self.n_hosts)

    def __eq__(self, other):
        return (isinstance(other, Placement) and self.n_hosts == other.n_hosts
                and np.array_equal(self.host_of, other.host_of))

    __hash__ = None


@dataclass(frozen=True)
class MigrationSet:
    """VMs selected for migration in one slot, each with its source host."""

    entries: tuple = ()

    def __post_init__(self):
        entries = tuple((int(vm), int(src)) for vm, src in self.entries)
        vms = [vm for vm, _ in entries]
        if len(set(vms)) != len(vms):
            raise ConstraintViolation("a VM appears twice in the migration set")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_vms(cls, placement, vms):
        return cls(tuple((int(vm), int(placement.host_of[vm])) for vm in vms))

    @property
    def vms(self):
        return [vm for vm, _ in self.entries]

    def by_source(self):
        groups = {}
        for vm, src in self.entries:
            groups.setdefault(src, []).append(vm)
        return groups

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True, eq=False)
class SlotAccounting:
    slot: int
    ec_host: float
    mc: float
    slavc: float
    ec_total: float
    chi: np.ndarray
    upsilon: np.ndarray
    migrations: tuple = ()
    failed: tuple = ()

    @property
    def overloaded_hosts(self):
        return int(np.count_nonzero(self.upsilon))

    @property
    def active_hosts(self):
        return int(np.count_nonzero(self.chi))


@dataclass(frozen=True, eq=False)
class ClusterState:
    """Cluster at the start of slot ``slot`` (``slot == slot_count`` once finished).

    ``history[t, j]`` is host j's utilisation (usage / capacity) after the
    migrations of slot t; ``overload_history[t, j]`` its SLA flag. Rows at
    or beyond ``slot`` are unused. Decisions for slot t see that slot's
    usage on the current placement, see :meth:`utilization_history`.
    """

    request: object
    hosts: tuple
    placement: Placement
    slot: int = 0
    slav_penalty_ratio: float = 0.5
    history: np.ndarray = field(default=None, repr=False)
    overload_history: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.slav_penalty_ratio <= 1:
            raise ConfigError("slav_penalty_ratio must lie in [0, 1]")
        if not 0 <= self.slot <= self.request.slot_count:
            raise SlotOutOfRange(f"slot {self.slot} outside request")
        if len(self.placement.host_of) != len(self.request):
            raise ConstraintViolation("placement does not cover the request")
        shape = (self.request.slot_count, len(self.hosts))
        if self.history is None:
            object.__setattr__(self, "history", np.zeros(shape))
        if self.overload_history is None:
            object.__setattr__(self, "overload_history", np.zeros(shape, dtype=bool))
        object.__setattr__(self, "capacity", np.array([h.capacity_mhz for h in self.hosts]))
        object.__setattr__(self, "base", np.array([h.base_power for h in self.hosts]))
        object.__setattr__(self, "bandwidth", np.array([h.bandwidth_kbps for h in self.hosts]))

    @property
    def n_hosts(self):
        return len(self.hosts)

    @property
    def done(self):
        return self.slot >= self.request.slot_count

    @property
    def observed_slot(self):
        """Slot whose usage the decisions of this slot see (the last one once done)."""
        return min(self.slot, self.request.slot_count - 1)

    def utilization_history(self):
        """Past post-migration utilisations plus the current slot on the current placement."""
        if self.done:
            return self.history[:self.slot]
        now = self.loads(self.slot) / self.capacity
        return np.vstack([self.history[:self.slot], now[None, :]])

    def host_history(self, j):
        return self.utilization_history()[:, j]

    def loads(self, t, host_of=None):
        _check_slot(self.request, t)
        host_of = self.placement.host_of if host_of is None else host_of
        return np.bincount(host_of, weights=self.request.cpu[:, t], minlength=self.n_hosts)


def _check_slot(request, t):
    if not 0 <= t < request.slot_count:
        raise SlotOutOfRange(f"slot {t} outside [0, {request.slot_count})")


def _seqsum(values):
    """Left-to-right float sum (fixed order, unlike numpy's pairwise sum)."""
    values = np.asarray(values, dtype=float)
    return float(np.add.accumulate(values)[-1]) if values.size else 0.0


def initial_placement(request, hosts, fill=TARGET_UTILIZATION):
    """Pack VMs by slot-0 usage, largest first, onto the fewest hosts.

    Each VM goes to the first host (active before empty, lowest index
    first) whose slot-0 utilisation stays within ``fill``. VMs that fit
    nowhere land on the relatively least-loaded host.
    """
    cap = np.array([h.capacity_mhz for h in hosts])
    loads = np.zeros(len(hosts))
    active = np.zeros(len(hosts), dtype=bool)
    host_of = np.zeros(len(request), dtype=np.int64)
    usage = request.cpu[:, 0] if len(request) else np.zeros(0)
    for vm in sorted(range(len(request)), key=lambda i: (-usage[i], i)):
        fits = loads + usage[vm] <= fill * cap
        if fits.any():
            # active hosts first, lowest index among them
            pref = np.flatnonzero(fits & active)
            j = int(pref[0]) if pref.size else int(np.flatnonzero(fits)[0])
        else:
            j = int(np.argmin((loads + usage[vm]) / cap))
        host_of[vm] = j
        loads[j] += usage[vm]
        active[j] = True
    return Placement(host_of, len(hosts))


def new_state(request, config=None, placement=None):
    config = config or ClusterConfig()
    hosts = make_hosts(request, config)
    if placement is None:
        placement = initial_placement(request, hosts, config.init_fill)
    return ClusterState(request=request, hosts=hosts, placement=placement, slot=0,
                        slav_penalty_ratio=config.slav_penalty_ratio)


def vm_energy(vm, t):
    """Energy of one VM in slot ``t``: its usage sample (slot length 1)."""
    if not 0 <= t < vm.slot_count:
        raise SlotOutOfRange(f"slot {t} outside [0, {vm.slot_count})")
    return float(vm.cpu_usage[t])


def host_overloaded(state, j, t):
    """1 if host j's summed VM energy in slot t reaches its capacity."""
    return int(state.loads(t)[j] >= state.capacity[j])


def slot_host_energy(state, t):
    loads = state.loads(t)
    active = state.placement.counts() > 0
    return _seqsum(np.where(active, state.base + loads, 0.0))


def migration_cost(state, mig, t):
    _check_slot(state.request, t)
    vms = sorted(vm for vm, _ in mig)
    return MIGRATION_OVERHEAD * _seqsum(state.request.cpu[vms, t])


def slav_compensation(state, t):
    upsilon = state.loads(t) >= state.capacity
    demand = np.bincount(state.placement.host_of, weights=state.request.d_vm,
                         minlength=state.n_hosts)
    return state.slav_penalty_ratio * _seqsum(np.where(upsilon, demand, 0.0))


def check_selection(state, mig):
    """Raise unless every (vm, source) pair matches the current placement."""
    host_of = state.placement.host_of
    for vm, src in mig:
        if not 0 <= vm < len(host_of):
            raise ConstraintViolation(f"slot {state.slot}: unknown VM {vm}")
        if host_of[vm] != src:
            raise ConstraintViolation(
                f"slot {state.slot}: VM {vm} is on host {host_of[vm]}, not on claimed source {src}")


def evaluate_placement(state, host_of, t, moved=()):
    """Account slot ``t`` for an arbitrary assignment (no state change).

    ``moved`` lists the VMs that migrated in this slot.
    """
    usage = state.request.cpu[:, t]
    loads = np.bincount(host_of, weights=usage, minlength=state.n_hosts)
    chi = np.bincount(host_of, minlength=state.n_hosts) > 0
    upsilon = loads >= state.capacity
    ec_host = _seqsum(np.where(chi, state.base + loads, 0.0))
    mc = MIGRATION_OVERHEAD * _seqsum(usage[sorted(moved)])
    demand = np.bincount(host_of, weights=state.request.d_vm, minlength=state.n_hosts)
    slavc = state.slav_penalty_ratio * _seqsum(np.where(upsilon, demand, 0.0))
    return ec_host, mc, slavc, chi, upsilon, loads


def advance_slot(state, mig, placer):
    """Run one slot and return ``(next_state, accounting)``.

    Order of events: the slot's usage is applied, ``placer`` assigns the
    VMs in ``mig`` (VMs it cannot place stay on their source and are
    reported in ``failed``), SLA and activity flags are taken on the
    resulting placement, and the three energy terms are summed.
    """
    t = state.slot
    _check_slot(state.request, t)
    check_selection(state, mig)
    alloc = placer(state, mig) if len(mig) else {}
    host_of = state.placement.host_of.copy()
    moved, failed = [], []
    for vm, src in mig:
        dst = alloc.get(vm)
        if dst is None:
            failed.append(vm)
            continue
        if dst == src:
            raise ConstraintViolation(f"slot {t}: VM {vm} placed back on its source host {src}")
        if not 0 <= dst < state.n_hosts:
            raise ConstraintViolation(f"slot {t}: VM {vm} placed on unknown host {dst}")
        host_of[vm] = dst
        moved.append((vm, src, int(dst)))
    moved.sort()
    ec_host, mc, slavc, chi, upsilon, loads = evaluate_placement(
        state, host_of, t, [vm for vm, _, _ in moved])
    acct = SlotAccounting(slot=t, ec_host=ec_host, mc=mc, slavc=slavc,
                          ec_total=ec_host + mc + slavc, chi=chi, upsilon=upsilon,
                          migrations=tuple(moved), failed=tuple(sorted(failed)))
    history = state.history.copy()
    history[t] = loads / state.capacity
    overload = state.overload_history.copy()
    overload[t] = upsilon
    nxt = replace(state, placement=Placement(host_of, state.n_hosts), slot=t + 1,
                  history=history, overload_history=overload)
    return nxt, acct


@dataclass
class PlacementReport:
    c1_all_assigned: bool
    c2_no_self_migration: bool
    c3_no_sla_violation: bool
    others_unmoved: bool
    unassigned: list = field(default_factory=list)
    self_migrations: list = field(default_factory=list)
    overloaded_hosts: list = field(default_factory=list)

    @property
    def ok(self):
        return (self.c1_all_assigned and self.c2_no_self_migration
                and self.c3_no_sla_violation and self.others_unmoved)


def validate_placement_result(state, mig, alloc):
    """Check a placer's output against the three placement constraints.

    ``alloc`` maps VM index to destination host (VMs missing from it were
    not placed). ``state`` carries the pre-migration placement and slot;
    the overload check uses that slot's usages on the resulting placement.
    """
    before = state.placement.host_of
    mig_vms = dict(mig.entries)
    unassigned = [vm for vm in mig_vms if vm not in alloc]
    self_moves = [vm for vm, dst in alloc.items() if vm in mig_vms and dst == mig_vms[vm]]
    others = all(vm in mig_vms for vm in alloc)
    after = before.copy()
    for vm, dst in alloc.items():
        after[vm] = dst
    t = min(state.slot, state.request.slot_count - 1)
    loads = np.bincount(after, weights=state.request.cpu[:, t], minlength=state.n_hosts)
    over = [int(j) for j in np.flatnonzero(loads >= state.capacity)]
    return PlacementReport(
        c1_all_assigned=not unassigned,
        c2_no_self_migration=not self_moves,
        c3_no_sla_violation=not over,
        others_unmoved=others,
        unassigned=sorted(unassigned), self_migrations=sorted(self_moves),
        overloaded_hosts=over)
