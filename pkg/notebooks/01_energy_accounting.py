# %% [markdown]
# Energy accounting on a three-VM toy cluster.
# Run with `python notebooks/01_energy_accounting.py`.

# %%
from rlvm.cluster import HostSpec, ClusterState, MigrationSet, Placement, advance_slot
from rlvm.trace import RequestSet, VmProfile

# two hosts of 1000 MHz, base power 100 per slot
hosts = (HostSpec(0, 1000.0, 100.0, 1e5), HostSpec(1, 1000.0, 100.0, 1e5))
vms = [
    VmProfile("a", 800, 4e6, [600, 600], [2e6, 2e6]),
    VmProfile("b", 800, 4e6, [400, 100], [1e6, 1e6]),
    VmProfile("c", 800, 4e6, [200, 200], [1e6, 1e6]),
]
req = RequestSet("toy", vms, slot_count=2)
state = ClusterState(req, hosts, Placement([0, 0, 1], 2))

# %% slot 0: host 0 carries 600 + 400 = 1000 MHz, which counts as overloaded
state, acct = advance_slot(state, MigrationSet(), None)
print("slot 0", acct.ec_host, acct.mc, acct.slavc, acct.ec_total, acct.upsilon.tolist())
# EC_host = (100 + 1000) + (100 + 200); SLAVC = 0.5 * (800 + 800)

# %% slot 1: move c next to a and b; host 1 goes dark
mig = MigrationSet(((2, 1),))
state, acct = advance_slot(state, mig, lambda st, m: {2: 0})
print("slot 1", acct.ec_host, acct.mc, acct.slavc, acct.ec_total, acct.chi.tolist())
# EC_host = 100 + 900, MC = 0.1 * 200
