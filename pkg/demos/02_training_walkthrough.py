# # Training the deploy agent
#
# Two kinds of source: one runs a long shell script once it reaches a
# honeypot, the other only probes closed ports. Each source sends a single
# connection, so every deploy decision is settled by the first event.

# %%
from honeyloop.agent import DQNAgent
from honeyloop.events import AttackerProfile, ProfileKind, generate_trace
from honeyloop.features import FeatureExtractor
from honeyloop.orchestrator import RLPolicy, WorldConfig, run_episode

script = tuple(f"echo step{i}" for i in range(20))


def profiles(n):
    return [
        AttackerProfile("engager", ProfileKind.SCRIPTED_BOT, event_rate=2.0, port_pool=(22,), burst_length=1.0,
                        n_ips=n, engagement_script=script, command_gap=5.0, payloads=(b"SSH-2.0-Go\r\n",)),
        AttackerProfile("prober", ProfileKind.SCANNER, event_rate=2.0, port_pool=(23, 445, 3389),
                        burst_length=1.0, n_ips=n, payloads=(b"",)),
    ]


world = WorldConfig(capacity=1000, promote=False)
agent = DQNAgent(seed=0)
extractor = FeatureExtractor()

# %% [markdown]
# Online training: epsilon-greedy decisions, one gradient step per decision.

# %%
policy = RLPolicy(agent, train=True, explore=True, promote=False)
for episode in range(17):
    extractor.reset_sessions()
    train_profiles = profiles(300)
    m = run_episode(generate_trace(train_profiles, 86400, episode), policy, world,
                    profiles=train_profiles, extractor=extractor).metrics
    if episode % 4 == 0:
        print(f"episode {episode:2d}  deploys {m.deploys:3d}/{m.decisions}  epsilon {agent.epsilon:.3f}")

# %% [markdown]
# Greedy evaluation on sources the agent has never seen.

# %%
held_out = profiles(150)
extractor.reset_sessions()
greedy = RLPolicy(agent, train=False, explore=False, promote=False)
result = run_episode(generate_trace(held_out, 86400, 10**6), greedy, world, profiles=held_out, extractor=extractor)
for pid, row in sorted(result.metrics.per_profile.items()):
    print(f"{pid:8s} deploy rate {row['deploy_rate']:.2f}")
