"""Episode-level metrics: energy, SLATAH, PDM, SLAV and migrations."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .cluster import MIGRATION_OVERHEAD, _seqsum

PER_SLOT_HEADER = ["slot", "ec_host", "mc", "slavc", "ec_total", "migrations",
                   "overloaded_hosts", "active_hosts"]
SUMMARY_HEADER = ["method", "request", "total_ec", "slatah", "pdm", "slav", "migrations", "seed"]


@dataclass
class EpisodeMetrics:
    total_ec: float = 0.0
    slatah: float = 0.0
    pdm: float = 0.0
    slav: float = 0.0
    migrations: int = 0
    per_slot: list = field(default_factory=list)
    failed_placements: int = 0


def slatah(accounting, n_hosts):
    """Mean over hosts of (overloaded slots / active slots).

    Hosts that were never active contribute 0.
    """
    if not accounting or n_hosts == 0:
        return 0.0
    over = np.sum([a.upsilon for a in accounting], axis=0)
    active = np.sum([a.chi for a in accounting], axis=0)
    ratios = np.divide(over, active, out=np.zeros(n_hosts), where=active > 0)
    return _seqsum(ratios) / n_hosts


def pdm(accounting, request):
    """Mean over VMs of migration-induced degradation / total demand.

    Each migration degrades the VM by 10% of its usage in that slot; the
    total demand is ``d_vm * slot_count``.
    """
    n = len(request)
    if n == 0:
        return 0.0
    degraded = np.zeros(n)
    for a in accounting:
        for vm, _, _ in a.migrations:
            degraded[vm] += MIGRATION_OVERHEAD * request.cpu[vm, a.slot]
    demanded = request.d_vm * request.slot_count
    return _seqsum(degraded / demanded) / n


def summarize(accounting, request, n_hosts):
    accounting = list(accounting)
    if not accounting:
        return EpisodeMetrics()
    s = slatah(accounting, n_hosts)
    p = pdm(accounting, request)
    per_slot = [(a.slot, a.ec_total, len(a.migrations), a.overloaded_hosts) for a in accounting]
    return EpisodeMetrics(
        total_ec=_seqsum([a.ec_total for a in accounting]),
        slatah=s, pdm=p, slav=s * p,
        migrations=sum(len(a.migrations) for a in accounting),
        per_slot=per_slot,
        failed_placements=sum(len(a.failed) for a in accounting))


def _num(x):
    return repr(float(x))


def per_slot_csv(accounting):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PER_SLOT_HEADER)
    for a in accounting:
        w.writerow([a.slot, _num(a.ec_host), _num(a.mc), _num(a.slavc), _num(a.ec_total),
                    len(a.migrations), a.overloaded_hosts, a.active_hosts])
    return buf.getvalue()


def summary_row(method, request_name, m, seed):
    return [method, request_name, _num(m.total_ec), _num(m.slatah), _num(m.pdm),
            _num(m.slav), m.migrations, seed]


def summary_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerows(rows)
    return buf.getvalue()
