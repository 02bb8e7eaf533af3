# %% [markdown]
# Train the learned selector on the spike benchmark and compare it with
# LR-MMT-PABFD. ITERATIONS (env) sets the budget; the benchmark config
# uses 300, about a minute per seed.
# Run with `python notebooks/03_train_selector.py`.

# %%
import os
from dataclasses import replace

from rlvm.agent import PPOConfig, train
from rlvm.cluster import ClusterConfig, load_kv
from rlvm.simulate import evaluate
from rlvm.trace import spike_benchmark

values = load_kv(os.path.join(os.path.dirname(__file__), "..", "configs", "spike_benchmark.cfg"))
cluster = ClusterConfig.from_mapping(values)
ppo = replace(PPOConfig.from_mapping(values), iterations=int(os.environ.get("ITERATIONS", 60)))
req = spike_benchmark(0)

# %%
result = train(req, cluster, ppo)
for row in result.curve[:: max(1, len(result.curve) // 10)]:
    print(f"iter {row['iteration']:4d}  sampled EC {row['mean_ec']:.6g}  migrations {row['mean_migrations']:.0f}")

# %%
for method, params in (("lr-mmt-pabfd", None), ("rl-pabfd", result.params)):
    m, _ = evaluate(req, method, cluster, params=params)
    print(f"{method:13s} EC {m.total_ec:.6g}  SLAV {m.slav:.3g}  migrations {m.migrations}")
