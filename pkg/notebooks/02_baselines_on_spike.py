# %% [markdown]
# The three LR-MMT baselines on the 50-VM spike benchmark, plus the two
# trivial selectors (never migrate, migrate everything) for scale.
# Run with `python notebooks/02_baselines_on_spike.py`.

# %%
from rlvm.cluster import ClusterConfig, MigrationSet
from rlvm.metrics import summarize
from rlvm.policies import Placer
from rlvm.simulate import evaluate, run_episode
from rlvm.trace import spike_benchmark

req = spike_benchmark(0)
cluster = ClusterConfig(sizing="usage")
print(f"{len(req)} VMs, {req.slot_count} slots")

# %%
for method in ("lr-mmt-random", "lr-mmt-ff", "lr-mmt-pabfd"):
    m, _ = evaluate(req, method, cluster)
    print(f"{method:14s} EC {m.total_ec:.6g}  SLAV {m.slav:.3g}  migrations {m.migrations}")

# %% reference selectors with the PABFD placer
for label, select in (("none", lambda s: MigrationSet()),
                      ("all", lambda s: MigrationSet.from_vms(s.placement, range(len(req))))):
    acct, final = run_episode(req, cluster, select, Placer("pabfd"))
    m = summarize(acct, req, final.n_hosts)
    print(f"{label:14s} EC {m.total_ec:.6g}  SLAV {m.slav:.3g}  migrations {m.migrations}")
