import numpy as np
import pytest
from hypothesis import given, strategies as st

from honeyloop.agent import DEPLOY, WAIT, AgentState, Transition
from honeyloop.errors import ConfigurationError, ConsistencyError, OrderingError
from honeyloop.events import AttackerProfile, EventTrace, NetworkEvent, ProfileKind, default_profiles, generate_trace
from honeyloop.orchestrator import (
    ACTIVE,
    EXPIRED,
    PENDING,
    AlwaysDeploy,
    ClusterState,
    Completion,
    NeverDeploy,
    Orchestrator,
    RandomPolicy,
    ThresholdPolicy,
    WorldConfig,
    make_policy,
    promote_if_underutilized,
    run_episode,
)
from honeyloop.valuation import RewardConfig

ENGAGER = AttackerProfile(
    "engager", ProfileKind.SCRIPTED_BOT, event_rate=1.0, engagement_script=tuple(f"echo step{i}" for i in range(20)),
    command_gap=5.0, gap_jitter=0.0,
)
SILENT = AttackerProfile("silent", ProfileKind.SCANNER, event_rate=1.0)


def ev(t, ip="1.1.1.1", port=22):
    return NetworkEvent(t, ip, dest_port=port)


def world(policy, profiles=(), ip_profiles=None, **cfg):
    return Orchestrator(policy, WorldConfig(**cfg), profiles=profiles, ip_profiles=ip_profiles, keep_transitions=True)


class Recorder(NeverDeploy):
    def __init__(self):
        self.calls = 0

    def decide(self, state, ctx):
        self.calls += 1
        return WAIT


def test_never_deploy_records_observation_without_pod():
    orch = world(Recorder())
    assert orch.step(ev(10)) == [("decision", WAIT, False)]
    assert orch.policy.calls == 1 and not orch.pods
    assert orch.extractor.history["1.1.1.1"]


def test_latency_window_and_routing_precedence():
    orch = world(AlwaysDeploy())
    effects = orch.step(ev(100))
    assert effects[0] == ("decision", DEPLOY, False) and effects[1][0] == "deploy"
    pod = orch.pods[effects[1][1]]
    assert pod.state == PENDING
    assert orch.step(ev(101)) == [("bypassed", pod.pod_id)]
    assert orch.step(ev(103)) == [("routed", pod.pod_id)]
    assert pod.state == ACTIVE and pod.activated_at == 102
    assert orch.metrics.decisions == 1


def test_unserved_port_bypasses_live_pod():
    orch = world(AlwaysDeploy())
    orch.step(ev(0))
    assert orch.step(ev(10, port=445))[0][0] == "bypassed"
    assert orch.metrics.decisions == 1


def test_second_deploy_returns_same_pod():
    orch = world(NeverDeploy())
    a = orch.deploy("2.2.2.2", 0)
    assert orch.deploy("2.2.2.2", 5) is a
    assert len(orch.pods) == 1


def test_capacity_skip_completes_with_penalty():
    orch = world(AlwaysDeploy(), capacity=1)
    orch.step(ev(0, "1.1.1.1"))
    effects = orch.step(ev(1, "2.2.2.2"))
    assert effects[-1] == ("skip", "2.2.2.2")
    skipped = orch.transitions[-1]
    assert skipped.reward == -0.05 and skipped.done and skipped.info["skipped"]
    assert skipped.next_state is skipped.state


def test_idle_expiry_boundary():
    orch = world(NeverDeploy())
    pod = orch.deploy("3.3.3.3", 0)
    orch.ledger[pod.pod_id] = Transition(AgentState(np.zeros((10, 163)), np.ones(10, bool), np.zeros(3)), DEPLOY)
    assert orch.expire_pods(2 + 1199) == []
    assert pod.state == ACTIVE
    done = orch.expire_pods(2 + 1200)
    assert [c.pod for c in done] == [pod] and pod.state == EXPIRED
    assert done[0].L == 0 and done[0].reason == "inactivity_timeout"
    assert orch.transitions[-1].reward == -0.05
    assert "3.3.3.3" not in orch.forwarding


def test_engaged_pod_earns_log_reward():
    orch = world(AlwaysDeploy(), profiles=[ENGAGER], ip_profiles={"1.1.1.1": "engager"})
    orch.step(ev(0))
    res = orch.finish()
    tr = res.transitions[0]
    assert tr.info["L"] == 20 and tr.reward == pytest.approx(2.0) and tr.done
    assert res.metrics.engaged_deploys == 1
    session = res.sessions[0]
    assert session["proto"] == "SSH" and len(session["logs"]) == 20
    # last log at 2 + 20*5 = 102; idle expiry 1200 s later
    assert orch.pods["pod-000001"].ended_at == 102 + 1200


def test_routed_telemetry_refreshes_idle_clock():
    orch = world(AlwaysDeploy())
    orch.step(ev(0))
    orch.step(ev(1000))
    assert orch.step(ev(2100))[0][0] == "routed"
    res = orch.finish()
    pod = orch.pods["pod-000001"]
    assert pod.ended_at == 2100 + 1200 and pod.accumulated_logs == 0
    assert res.transitions[0].reward == -0.05


def test_max_ttl_expiry():
    orch = world(AlwaysDeploy(), max_ttl=500)
    orch.step(ev(0))
    orch.step(ev(300))
    orch.step(ev(499))
    orch.finish()
    pod = orch.pods["pod-000001"]
    assert pod.ended_at == 500 and pod.end_reason == "max_ttl"
    # an empty capture that ends by ttl gets the plain no-logs penalty
    assert orch.transitions[0].reward == -0.1


def test_attribute_reward_requires_pending_transition():
    orch = world(NeverDeploy())
    pod = orch.deploy("4.4.4.4", 0)
    with pytest.raises(ConsistencyError):
        orch.attribute_reward(Completion(pod, 0, 0.0, "inactivity_timeout"))


def test_wait_completes_on_next_decision_or_silence():
    orch = world(NeverDeploy())
    orch.step(ev(0))
    orch.step(ev(60))
    first = orch.transitions[0]
    assert first.reward == 0.0 and not first.done and first.next_state is not first.state
    orch.finish()
    last = orch.transitions[1]
    assert last.done and last.reward == 0.0


def test_out_of_order_event_rejected():
    orch = world(NeverDeploy())
    orch.step(ev(50))
    with pytest.raises(OrderingError):
        orch.step(ev(49))


def test_promotion_examples():
    assert promote_if_underutilized(WAIT, ClusterState(0.5, 0.4, 5, 10)) == (DEPLOY, True)
    assert promote_if_underutilized(WAIT, ClusterState(0.7, 0.2, 7, 10)) == (WAIT, False)
    assert promote_if_underutilized(DEPLOY, ClusterState(0.9, 0.9, 9, 10)) == (DEPLOY, False)
    assert promote_if_underutilized(WAIT, ClusterState(0.1, 0.1, 10, 10)) == (WAIT, False)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 20), st.integers(1, 20), st.sampled_from([WAIT, DEPLOY]))
def test_promotion_never_fires_when_busy(cpu, mem, active, cap, action):
    out, promoted = promote_if_underutilized(action, ClusterState(cpu, mem, min(active, cap), cap))
    if max(cpu, mem) >= 0.6:
        assert not promoted
    assert out == DEPLOY or action == WAIT


def test_policy_factory():
    assert make_policy("threshold:4").k == 4
    assert make_policy("random:0.25").p == 0.25
    with pytest.raises(ConfigurationError):
        make_policy("threshold:0")
    with pytest.raises(ConfigurationError):
        make_policy("oracle")


def test_threshold_policy_deploys_on_kth_event():
    orch = world(ThresholdPolicy(3))
    effects = [orch.step(ev(t))[0] for t in (0, 10, 20)]
    assert [e[1] for e in effects] == [WAIT, WAIT, DEPLOY]


def test_static_policy_metrics():
    profiles = default_profiles(60)
    trace = generate_trace(profiles, 7200, 4)
    never = run_episode(trace, NeverDeploy(), profiles=profiles).metrics
    assert never.deploys == 0 and never.total_runtime_cost == 0.0
    scanners = [p for p in profiles if p.kind is ProfileKind.SCANNER]
    strace = generate_trace(scanners, 7200, 4)
    always = run_episode(strace, AlwaysDeploy(), WorldConfig(capacity=1000), profiles=scanners).metrics
    assert always.deploys > 0 and always.deployment_efficiency == 0.0
    assert always.per_profile["scanner"]["deploy_rate"] == 1.0


def test_episode_is_deterministic():
    profiles = default_profiles(80)
    trace = generate_trace(profiles, 14400, 5)
    a = run_episode(trace, RandomPolicy(0.4, seed=2), profiles=profiles)
    b = run_episode(trace, RandomPolicy(0.4, seed=2), profiles=profiles)
    assert a.metrics.to_json() == b.metrics.to_json()
    assert a.sessions == b.sessions and a.timeseries == b.timeseries


class PromotableRandom(RandomPolicy):
    promotable = True


def test_randomized_trace_upholds_invariants():
    profiles = default_profiles(2000)
    trace = generate_trace(profiles, 43200, 8)
    orch = Orchestrator(PromotableRandom(0.3, seed=1), WorldConfig(capacity=8), profiles=profiles,
                        ip_profiles=trace.ip_profiles, keep_transitions=True)
    deploy_like = 0
    for event in trace.events:
        cluster = orch.cluster()
        effects = orch.step(event)
        orch.check_invariants()
        for e in effects:
            if e[0] == "decision" and e[2]:
                assert max(cluster.cpu_util, cluster.mem_util) < 0.6
            deploy_like += e[0] in ("deploy", "skip")
    res = orch.finish()
    rewarded = [t for t in res.transitions if t.action == DEPLOY]
    assert deploy_like == len(rewarded)
    assert all(t.reward is not None and not t.pending for t in res.transitions)
    assert res.metrics.completed_transitions == res.metrics.decisions
    assert res.metrics.mean_time_to_redirect >= 2
    assert res.metrics.promoted > 0
