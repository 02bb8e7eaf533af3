import numpy as np
import pytest

from rlvm.cluster import ClusterState, HostSpec, Placement
from rlvm.trace import RequestSet, VmProfile


def make_request(cpu, d_vm=None, ram=None, ram_demand=None, name="t"):
    """Request from an (n_vms, n_slots) usage array."""
    cpu = np.atleast_2d(np.asarray(cpu, dtype=float))
    n, s = cpu.shape
    d_vm = np.full(n, max(1.0, float(cpu.max()) if cpu.size else 1.0)) if d_vm is None else np.broadcast_to(d_vm, (n,))
    ram = np.full((n, s), 1000.0) if ram is None else np.broadcast_to(np.asarray(ram, dtype=float), (n, s))
    ram_demand = np.full(n, 2000.0) if ram_demand is None else np.broadcast_to(ram_demand, (n,))
    profiles = [VmProfile(f"vm{i:03d}", d_vm[i], ram_demand[i], cpu[i], ram[i]) for i in range(n)]
    return RequestSet(name=name, profiles=profiles, slot_count=s)


def make_state(cpu, host_of, capacity=1000.0, base=100.0, n_hosts=None, d_vm=None,
               ram=None, bandwidth=100_000.0, c_slav=0.5, slot=0):
    req = make_request(cpu, d_vm=d_vm, ram=ram)
    n_hosts = n_hosts or (max(host_of) + 1 if len(host_of) else 1)
    cap = np.broadcast_to(np.asarray(capacity, dtype=float), (n_hosts,))
    bs = np.broadcast_to(np.asarray(base, dtype=float), (n_hosts,))
    hosts = tuple(HostSpec(j, cap[j], bs[j], bandwidth) for j in range(n_hosts))
    return ClusterState(request=req, hosts=hosts, placement=Placement(host_of, n_hosts),
                        slot=slot, slav_penalty_ratio=c_slav)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in mod.REPORT:
            terminalreporter.write_line(line)
