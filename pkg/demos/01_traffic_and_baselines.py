# # Synthetic traffic and static baselines
#
# A deterministic trace of attacker traffic is replayed under a few fixed
# policies. The numbers are identical on every run for a given seed.

# %%
import statistics
from collections import Counter

from honeyloop.events import default_profiles, generate_trace
from honeyloop.orchestrator import WorldConfig, make_policy, run_episode
from honeyloop.valuation import RewardConfig

profiles = default_profiles(400)
trace = generate_trace(profiles, 86400, seed=1)
print(len(trace), "events from", len(trace.ip_profiles), "sources")

# %% [markdown]
# Most sources only knock a handful of times, which is what makes the
# deploy-or-skip call hard.

# %%
counts = list(trace.counts_per_ip().values())
print("median events per source:", statistics.median(counts))
print("by profile:", Counter(trace.ip_profiles[ev.src_ip] for ev in trace.events).most_common())

# %% [markdown]
# Replaying the same trace under each baseline.

# %%
for name in ("never_deploy", "always_deploy", "threshold:3", "random:0.5"):
    m = run_episode(trace, make_policy(name, seed=1), WorldConfig(seed=1), RewardConfig(), profiles).metrics
    eff = "n/a" if m.deployment_efficiency is None else f"{m.deployment_efficiency:.2f}"
    print(f"{name:14s} deploys {m.deploys:4d}  efficiency {eff:>5s}  "
          f"reward {m.cumulative_reward:8.2f}  cost {m.total_runtime_cost:9.1f}")
