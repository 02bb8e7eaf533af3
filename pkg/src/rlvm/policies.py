"""Baseline consolidation policies.

Detection (local regression, LR), selection (minimum migration time,
MMT) and placement (PABFD, first fit, random) are kept as separate
pieces so the learned selector can reuse the placers unchanged.

Selectors and placers both work with the usage of the slot being
decided: the detector's latest history point is the current slot's
utilisation on the placement in force before migration.
"""

from dataclasses import dataclass

import numpy as np

from .cluster import MigrationSet
from .errors import ConfigError, PreconditionError
from .rng import make_rng


@dataclass(frozen=True)
class DetectionConfig:
    """Local-regression detector settings.

    ``window`` points are fitted; the forecast û is flagged when
    ``safety * û >= 1``.
    """

    window: int = 10
    safety: float = 1.2

    def __post_init__(self):
        if self.window < 3:
            raise ConfigError("lr.window must be at least 3")
        if self.safety < 1:
            raise ConfigError("lr.safety must be at least 1")

    @classmethod
    def from_mapping(cls, values):
        kwargs = {}
        if "lr.window" in values:
            kwargs["window"] = int(values["lr.window"])
        if "lr.safety" in values:
            kwargs["safety"] = float(values["lr.safety"])
        return cls(**kwargs)


def tricube_weights(n):
    """Weights for points 1..n (oldest first); the newest point weighs 1."""
    k = np.arange(1, n + 1)
    return (1 - ((n - k) / n) ** 3) ** 3


def _fit_forecast(y, w):
    """Weighted least-squares line through the rows of ``y``, one step ahead.

    ``y`` has shape (n, hosts); returns the forecast at x = n + 1.
    """
    n = y.shape[0]
    x = np.arange(1, n + 1, dtype=float)
    sw = w.sum()
    sx = w @ x
    sxx = w @ (x * x)
    sy = w @ y
    sxy = (w * x) @ y
    slope = (sw * sxy - sx * sy) / (sw * sxx - sx * sx)
    intercept = (sy - slope * sx) / sw
    return intercept + slope * (n + 1)


def lr_overload_predict(history, cfg=DetectionConfig()):
    """Forecast next-slot utilisation and flag overload.

    Returns ``(predicted_next, overloaded)``. With fewer than
    ``cfg.window`` points the last value is carried forward and compared
    against the static threshold ``1 / safety``.
    """
    h = np.asarray(history, dtype=float)
    if h.size == 0:
        raise PreconditionError("history must be non-empty")
    if not np.all(np.isfinite(h)):
        raise PreconditionError("history must be finite")
    if h.size < cfg.window:
        last = float(h[-1])
        return last, bool(last >= 1 / cfg.safety)
    pred = float(_fit_forecast(h[-cfg.window:, None], tricube_weights(cfg.window))[0])
    return pred, bool(cfg.safety * pred >= 1)


def lr_predict_hosts(history, cfg=DetectionConfig()):
    """Vectorised :func:`lr_overload_predict` over the columns of ``history``.

    An empty history yields zero forecasts and no flags.
    """
    history = np.asarray(history, dtype=float)
    n, m = history.shape
    if n == 0:
        return np.zeros(m), np.zeros(m, dtype=bool)
    if n < cfg.window:
        last = history[-1].copy()
        return last, last >= 1 / cfg.safety
    pred = _fit_forecast(history[-cfg.window:], tricube_weights(cfg.window))
    return pred, cfg.safety * pred >= 1


def mmt_select(state, j, cfg=DetectionConfig()):
    """Minimum-migration-time selection on a flagged host.

    Repeatedly removes the resident VM with the smallest
    ``ram usage / bandwidth`` and re-runs the detector with the reduced
    utilisation in place of the latest history point, until the host is
    no longer flagged. Returns VM indices in pick order.
    """
    hist = np.array(state.host_history(j), dtype=float)
    if hist.size == 0 or not lr_overload_predict(hist, cfg)[1]:
        raise PreconditionError(f"host {j} is not flagged as overloaded")
    o = state.observed_slot
    cap = state.capacity[j]
    bw = state.bandwidth[j]
    members = state.placement.members(j)
    ram = state.request.ram[:, o]
    cpu = state.request.cpu[:, o]
    queue = sorted(members, key=lambda vm: (ram[vm] / bw, vm))
    picked = []
    for vm in queue:
        picked.append(int(vm))
        hist[-1] -= cpu[vm] / cap
        if not lr_overload_predict(hist, cfg)[1]:
            break
    return picked


def _run_placement(vms, usage, sources, loads, counts, choose):
    loads = np.array(loads, dtype=float)
    counts = np.array(counts, dtype=np.int64)
    idx = np.arange(len(loads))
    alloc = {}
    for vm in vms:
        u = usage[vm]
        src = sources[vm]
        # no SLA violation after adding, and never the source host
        feasible = (loads + u < choose.capacity) & (idx != src)
        dst = choose(feasible, counts, u) if feasible.any() else None
        if dst is None:
            # unplaced VM stays on its source and occupies it again
            dst_load = src
        else:
            alloc[vm] = dst_load = int(dst)
        loads[dst_load] += u
        counts[dst_load] += 1
    return alloc


class _Chooser:
    def __init__(self, hosts):
        self.capacity = np.array([h.capacity_mhz for h in hosts], dtype=float)
        self.base = np.array([h.base_power for h in hosts], dtype=float)


class _PowerAware(_Chooser):
    def __call__(self, feasible, counts, u):
        # estimatePower: base power if the host must be woken, plus the VM's energy
        power = np.where(counts == 0, self.base, 0.0) + u
        return int(np.argmin(np.where(feasible, power, np.inf)))


class _FirstFit(_Chooser):
    def __call__(self, feasible, counts, u):
        return int(np.argmax(feasible))


class _Uniform(_Chooser):
    def __init__(self, hosts, rng):
        super().__init__(hosts)
        self.rng = rng

    def __call__(self, feasible, counts, u):
        return int(self.rng.choice(np.flatnonzero(feasible)))


def pabfd_place(hosts, loads, counts, vms, usage, sources):
    """Power-aware best fit with the no-overload and not-the-source filters.

    ``loads``/``counts`` are per-host usage and VM counts with the VMs in
    ``vms`` already detached. VMs are handled in list order and committed
    one by one; each goes to the feasible host with the lowest estimated
    power increase, ties to the lowest index. Returns a partial
    ``{vm: host}`` map; unplaceable VMs are absent.
    """
    return _run_placement(vms, usage, sources, loads, counts, _PowerAware(hosts))


def ff_place(hosts, loads, counts, vms, usage, sources):
    """First feasible host in index order."""
    return _run_placement(vms, usage, sources, loads, counts, _FirstFit(hosts))


def random_place(hosts, loads, counts, vms, usage, sources, seed=0):
    """Uniform choice among feasible hosts, drawn from a stream seeded by ``seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    return _run_placement(vms, usage, sources, loads, counts, _Uniform(hosts, rng))


def detached(state, mig):
    """Per-host loads and counts at the current slot with ``mig`` removed."""
    usage = state.request.cpu[:, state.slot]
    keep = np.ones(len(usage), dtype=bool)
    keep[mig.vms] = False
    host_of = state.placement.host_of[keep]
    loads = np.bincount(host_of, weights=usage[keep], minlength=state.n_hosts)
    counts = np.bincount(host_of, minlength=state.n_hosts)
    return loads, counts, usage


class Placer:
    """Adapter from a placement function to the ``advance_slot`` interface."""

    names = ("pabfd", "ff", "random")

    def __init__(self, name, seed=0):
        if name not in self.names:
            raise ConfigError(f"unknown placer {name!r}")
        self.name = name
        self.seed = seed

    def __call__(self, state, mig):
        loads, counts, usage = detached(state, mig)
        sources = dict(mig.entries)
        args = (state.hosts, loads, counts, mig.vms, usage, sources)
        if self.name == "pabfd":
            return pabfd_place(*args)
        if self.name == "ff":
            return ff_place(*args)
        return random_place(*args, seed=make_rng(self.seed, state.slot))

    def __repr__(self):
        return f"Placer({self.name!r}, seed={self.seed})"


COMBOS = {
    "lr-mmt-random": "random",
    "lr-mmt-ff": "ff",
    "lr-mmt-pabfd": "pabfd",
}


def lr_mmt_select(state, cfg=DetectionConfig()):
    """Run LR on every host and MMT on each flagged host."""
    hist = state.utilization_history()
    _, flags = lr_predict_hosts(hist, cfg)
    counts = state.placement.counts()
    entries = []
    for j in np.flatnonzero(flags & (counts > 0)):
        entries.extend((vm, int(j)) for vm in mmt_select(state, int(j), cfg))
    return MigrationSet(tuple(entries))


def baseline_step(state, combo, cfg=DetectionConfig(), seed=0):
    """Return ``(MIG_t, placer)`` for one of the LR-MMT-* combinations."""
    try:
        placer_name = COMBOS[combo.lower()]
    except KeyError:
        raise ConfigError(f"unknown baseline {combo!r}; expected one of {sorted(COMBOS)}") from None
    return lr_mmt_select(state, cfg), Placer(placer_name, seed)
