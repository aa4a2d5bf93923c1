"""Simulated event loop tying sensor traffic, the policy and honeypot pods together.

Per source address the loop either forwards traffic to that address's pod
or builds an observation and asks the policy for ``wait``/``deploy``.

Transition bookkeeping per address:

* a ``wait`` stays pending until the address's next decision (reward 0, not
  terminal) or until it has been silent for ``wait_silence`` seconds
  (reward 0, terminal);
* a ``deploy`` that finds the cluster full completes at once with the skip
  penalty;
* any other ``deploy`` stays pending until its pod expires, when the
  valuation module prices the captured session.

Internal happenings (pod activation, attacker commands inside pods, expiry
and silence deadlines) sit on a heap keyed by sim-time and are drained
before any telemetry event with an equal or later timestamp.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import statistics
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .agent import DEPLOY, WAIT, AgentState, DQNAgent, Transition
from .errors import ConfigurationError, ConsistencyError, OrderingError, PreconditionError
from .events import AttackerProfile, EventTrace, NetworkEvent, engagement_logs, stream_seed
from .features import FeatureExtractor
from .valuation import (
    AutoencoderModel,
    RewardConfig,
    RollingLBar,
    deploy_reward,
    quality_reward,
    session_features,
    terminal_penalties,
)

PENDING, ACTIVE, EXPIRED, TERMINATED = "pending", "active", "expired", "terminated"
_LIVE = (PENDING, ACTIVE)

_PRIO_ACTIVATE, _PRIO_DEADLINE, _PRIO_LOG = 0, 1, 2

SERVICE_PROTOCOLS = {22: "SSH", 23: "TELNET", 2323: "TELNET", 80: "HTTP", 8080: "HTTP", 443: "HTTPS"}


@dataclass
class WorldConfig:
    capacity: int = 10
    provisioning_latency: int = 2
    idle_timeout: int = 1200
    max_ttl: int = 3600
    wait_silence: int = 1800
    promote: bool = True
    promote_threshold: float = 0.6
    cpu_per_pod: float = 1.0
    mem_per_pod: float = 0.8
    # ports a pod serves; None forwards every port
    service_ports: tuple[int, ...] | None = (22, 23, 80, 443, 2323, 8080)
    timeseries_interval: int = 60
    seed: int = 0

    def validate(self) -> "WorldConfig":
        if self.capacity < 1:
            raise ConfigurationError("world.capacity must be >= 1")
        for name in ("provisioning_latency", "idle_timeout", "max_ttl", "wait_silence", "timeseries_interval"):
            if getattr(self, name) < 0 or (name != "provisioning_latency" and getattr(self, name) == 0):
                raise ConfigurationError(f"world.{name} must be positive")
        if not 0.0 <= self.promote_threshold <= 1.0:
            raise ConfigurationError("world.promote_threshold must be in [0, 1]")
        if self.service_ports is not None:
            self.service_ports = tuple(int(p) for p in self.service_ports)
        return self


@dataclass
class ClusterState:
    cpu_util: float
    mem_util: float
    active_pods: int
    capacity: int

    def runtime_features(self) -> np.ndarray:
        """(max utilisation, occupied share of capacity, capacity / 100)."""
        return np.array([
            max(self.cpu_util, self.mem_util), self.active_pods / self.capacity, self.capacity / 100.0,
        ])


@dataclass
class PodRecord:
    pod_id: str
    src_ip: str
    pod_ip: str
    created_at: int
    provisioning_latency: int
    max_ttl: int
    state: str = PENDING
    last_interaction_at: int = 0
    activated_at: int | None = None
    ended_at: int | None = None
    end_reason: str | None = None
    accumulated_logs: int = 0
    runtime_cost: float = 0.0
    routed_events: int = 0
    dest_port: int = 0
    profile_id: str | None = None
    promoted: bool = False
    idle_timeout: int = 1200
    logs: list = field(default_factory=list)

    def advance(self, new_state: str) -> None:
        allowed = {PENDING: (ACTIVE, TERMINATED), ACTIVE: (EXPIRED, TERMINATED)}
        if new_state not in allowed.get(self.state, ()):
            raise ConsistencyError(f"pod {self.pod_id}: illegal transition {self.state} -> {new_state}")
        self.state = new_state

    @property
    def deadline(self) -> int:
        return min(self.last_interaction_at + self.idle_timeout, self.created_at + self.max_ttl)


@dataclass
class ForwardingEntry:
    src_ip: str
    pod_ip: str
    ports: tuple[int, ...] | None
    installed_at: int
    ttl: int

    def covers(self, event: NetworkEvent) -> bool:
        if event.timestamp < self.installed_at:
            return False
        return self.ports is None or event.dest_port in self.ports


class Completion(NamedTuple):
    pod: PodRecord
    L: int
    runtime_cost: float
    reason: str


def promote_if_underutilized(action: int, cluster: ClusterState, threshold: float = 0.6) -> tuple[int, bool]:
    """Turn ``wait`` into ``deploy`` when the cluster is idle enough.

    Returns the action to execute and whether a promotion happened.
    """
    if action not in (WAIT, DEPLOY):
        raise PreconditionError(f"action must be wait(0) or deploy(1), got {action!r}")
    if action == WAIT and max(cluster.cpu_util, cluster.mem_util) < threshold and cluster.active_pods < cluster.capacity:
        return DEPLOY, True
    return action, False


# -- policies --------------------------------------------------------------------

@dataclass
class DecisionContext:
    event: NetworkEvent
    events_seen: int
    cluster: ClusterState


class Policy:
    name = "policy"
    promotable = False

    def decide(self, state: AgentState, ctx: DecisionContext) -> int:
        raise NotImplementedError

    def remember(self, tr: Transition) -> None:
        pass

    def after_decision(self) -> None:
        pass


class NeverDeploy(Policy):
    name = "never_deploy"

    def decide(self, state, ctx):
        return WAIT


class AlwaysDeploy(Policy):
    name = "always_deploy"

    def decide(self, state, ctx):
        return DEPLOY


class ThresholdPolicy(Policy):
    """Deploy once an address has sent at least ``k`` events."""

    def __init__(self, k: int):
        if k < 1:
            raise ConfigurationError(f"threshold k must be >= 1, got {k}")
        self.k = k
        self.name = f"threshold:{k}"

    def decide(self, state, ctx):
        return DEPLOY if ctx.events_seen >= self.k else WAIT


class RandomPolicy(Policy):
    def __init__(self, p: float, seed: int = 0):
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError(f"random policy p must be in [0, 1], got {p}")
        self.p = p
        self.rng = np.random.default_rng(seed)
        self.name = f"random:{p:g}"

    def decide(self, state, ctx):
        return DEPLOY if self.rng.random() < self.p else WAIT


class RLPolicy(Policy):
    """Epsilon-greedy DQN agent; optionally trains after every decision."""

    name = "rl_agent"
    promotable = True

    def __init__(self, agent: DQNAgent, train: bool = True, explore: bool = True, promote: bool = True):
        self.agent = agent
        self.train = train
        self.explore = explore
        self.promotable = promote
        self.losses: list[float] = []

    def decide(self, state, ctx):
        return self.agent.act(state, explore=self.explore)

    def remember(self, tr):
        if self.train:
            self.agent.remember(tr)

    def after_decision(self):
        if self.explore:
            self.agent.decay()
        if self.train and self.agent.decisions % self.agent.config.train_every == 0:
            loss = self.agent.train_step()
            if loss is not None:
                self.losses.append(loss)


def make_policy(name: str, agent: DQNAgent | None = None, seed: int = 0, **rl_kwargs) -> Policy:
    """Build a policy from ``never_deploy``, ``always_deploy``, ``threshold:K``,
    ``random:P`` or ``rl_agent``."""
    kind, _, arg = name.partition(":")
    if kind == "never_deploy":
        return NeverDeploy()
    if kind == "always_deploy":
        return AlwaysDeploy()
    if kind == "threshold":
        return ThresholdPolicy(int(arg or 3))
    if kind == "random":
        return RandomPolicy(float(arg or 0.5), seed=seed)
    if kind == "rl_agent":
        return RLPolicy(agent if agent is not None else DQNAgent(seed=seed), **rl_kwargs)
    raise ConfigurationError(f"policy: unknown policy {name!r}")


# -- metrics ---------------------------------------------------------------------

@dataclass
class Metrics:
    policy: str
    events: int = 0
    decisions: int = 0
    deploys: int = 0
    skips: int = 0
    promoted: int = 0
    routed_events: int = 0
    bypassed_events: int = 0
    engaged_deploys: int = 0
    deployment_efficiency: float | None = None
    mean_time_to_redirect: float | None = None
    median_time_to_redirect: float | None = None
    total_runtime_cost: float = 0.0
    cost_per_engagement: float | None = None
    cumulative_reward: float = 0.0
    completed_transitions: int = 0
    precision: float | None = None
    recall: float | None = None
    per_profile: dict = field(default_factory=dict)
    mean_loss: float | None = None
    epsilon: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class RunResult:
    metrics: Metrics
    sessions: list
    timeseries: list
    transitions: list

    def timeseries_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["timestamp", "active_pods", "cpu_util", "deploys", "rewards"])
        w.writerows(self.timeseries)
        return buf.getvalue()


# -- world -----------------------------------------------------------------------

class Orchestrator:
    def __init__(
        self,
        policy: Policy,
        config: WorldConfig | None = None,
        reward: RewardConfig | None = None,
        profiles: Iterable[AttackerProfile] = (),
        ip_profiles: dict[str, str] | None = None,
        extractor: FeatureExtractor | None = None,
        anomaly_model: AutoencoderModel | None = None,
        keep_transitions: bool = False,
    ):
        self.policy = policy
        self.config = (config or WorldConfig()).validate()
        self.reward_cfg = (reward or RewardConfig()).validate()
        self.profiles = {p.profile_id: p for p in profiles}
        self.ip_profiles = dict(ip_profiles or {})
        self.extractor = extractor or FeatureExtractor()
        self.anomaly_model = anomaly_model
        self.l_bar = RollingLBar(self.reward_cfg.L_bar, self.reward_cfg.rolling_window)
        self.keep_transitions = keep_transitions

        self.now: int | None = None
        self.pods: dict[str, PodRecord] = {}
        self.live_by_ip: dict[str, str] = {}
        self.forwarding: dict[str, ForwardingEntry] = {}
        self.ledger: dict[str, Transition] = {}
        self.pending_waits: "OrderedDict[str, Transition]" = OrderedDict()
        self._heap: list = []
        self._seq = 0
        self._events_per_ip: dict[str, int] = {}
        self._pod_counter = 0
        self._ended = 0

        self.metrics = Metrics(policy=policy.name)
        self.sessions: list[dict] = []
        self.timeseries: list[tuple] = []
        self.transitions: list[Transition] = []
        self._redirect_times: list[int] = []
        self._deploy_decisions = 0
        self._deploy_completions = 0
        self._decisions_by_profile: dict[str, list[int]] = {}
        self._deployed_ips: set[str] = set()
        self._next_sample: int | None = None

    # -- cluster view ------------------------------------------------------

    @property
    def live_pods(self) -> int:
        return len(self.live_by_ip)

    def cluster(self) -> ClusterState:
        c = self.config
        n = self.live_pods
        return ClusterState(
            cpu_util=min(1.0, n * c.cpu_per_pod / c.capacity),
            mem_util=min(1.0, n * c.mem_per_pod / c.capacity),
            active_pods=n,
            capacity=c.capacity,
        )

    # -- scheduling --------------------------------------------------------

    def _push(self, t: int, prio: int, kind: str, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, prio, self._seq, kind, payload))

    def _advance(self, until: int | None) -> None:
        while self._heap and (until is None or self._heap[0][0] <= until):
            t, _, _, kind, payload = heapq.heappop(self._heap)
            self.now = t if self.now is None else max(self.now, t)
            if kind == "activate":
                self._activate(self.pods[payload])
            elif kind == "deadline":
                pod = self.pods[payload]
                if pod.state == ACTIVE and t >= pod.deadline:
                    self._expire(pod)
            elif kind == "log":
                pod_id, log = payload
                pod = self.pods[pod_id]
                if pod.state == ACTIVE:
                    pod.logs.append(log)
                    pod.accumulated_logs += 1
                    pod.last_interaction_at = log.timestamp
                    self._push(pod.deadline, _PRIO_DEADLINE, "deadline", pod_id)
            elif kind == "silence":
                ip, decided_at = payload
                tr = self.pending_waits.get(ip)
                if tr is not None and tr.info["t"] == decided_at:
                    del self.pending_waits[ip]
                    self._finish(tr, 0.0, done=True)

    # -- pod lifecycle -----------------------------------------------------

    def deploy(self, src_ip: str, now: int, dest_port: int = 0, promoted: bool = False) -> PodRecord | None:
        """Create a pod for ``src_ip``; ``None`` when skipped for lack of capacity.

        A second deploy for an address with a live pod returns that pod.
        """
        existing = self.live_by_ip.get(src_ip)
        if existing is not None:
            return self.pods[existing]
        c = self.config
        if self.live_pods >= c.capacity:
            self.metrics.skips += 1
            return None
        self._pod_counter += 1
        pod_id = f"pod-{self._pod_counter:06d}"
        pod = PodRecord(
            pod_id=pod_id, src_ip=src_ip, pod_ip=f"10.42.{(self._pod_counter >> 8) & 255}.{self._pod_counter & 255}",
            created_at=now, provisioning_latency=c.provisioning_latency, max_ttl=c.max_ttl,
            last_interaction_at=now, dest_port=dest_port, profile_id=self.ip_profiles.get(src_ip),
            promoted=promoted, idle_timeout=c.idle_timeout,
        )
        self.pods[pod_id] = pod
        self.live_by_ip[src_ip] = pod_id
        self.forwarding[src_ip] = ForwardingEntry(
            src_ip, pod.pod_ip, c.service_ports, installed_at=now + c.provisioning_latency, ttl=c.max_ttl
        )
        self.metrics.deploys += 1
        self._deployed_ips.add(src_ip)
        self._push(now + c.provisioning_latency, _PRIO_ACTIVATE, "activate", pod_id)
        return pod

    def _activate(self, pod: PodRecord) -> None:
        pod.advance(ACTIVE)
        t = self.now
        pod.activated_at = t
        pod.last_interaction_at = t
        # pods are created at decision time
        self._redirect_times.append(t - pod.created_at)
        self._push(pod.deadline, _PRIO_DEADLINE, "deadline", pod.pod_id)
        profile = self.profiles.get(pod.profile_id) if pod.profile_id else None
        if profile is not None and profile.kind.engages:
            end = pod.created_at + pod.max_ttl
            if end > t:
                logs = engagement_logs(
                    profile, (t, end), seed=stream_seed(self.config.seed, pod.pod_id),
                    src_ip=pod.src_ip, idle_timeout=self.config.idle_timeout,
                )
                for log in logs:
                    self._push(log.timestamp, _PRIO_LOG, "log", (pod.pod_id, log))

    def expire_pods(self, now: int) -> list[Completion]:
        """Advance internal time to ``now`` and return the pods that expired."""
        before = {pid for pid, p in self.pods.items() if p.state in _LIVE}
        self._advance(now)
        return [self._completion(self.pods[pid]) for pid in sorted(before) if self.pods[pid].state == EXPIRED]

    def _completion(self, pod: PodRecord) -> Completion:
        return Completion(pod, pod.accumulated_logs, pod.runtime_cost, pod.end_reason)

    def _expire(self, pod: PodRecord) -> None:
        t = self.now
        pod.advance(EXPIRED)
        self._ended += 1
        pod.ended_at = t
        idle_deadline = pod.last_interaction_at + self.config.idle_timeout
        pod.end_reason = "inactivity_timeout" if idle_deadline <= pod.created_at + pod.max_ttl else "max_ttl"
        pod.runtime_cost = (t - pod.created_at) / 60.0
        del self.live_by_ip[pod.src_ip]
        del self.forwarding[pod.src_ip]
        self.metrics.total_runtime_cost += pod.runtime_cost
        if pod.accumulated_logs > 0:
            self.metrics.engaged_deploys += 1
            self.sessions.append({
                "session_id": pod.pod_id,
                "src_ip": pod.src_ip,
                "profile_id": pod.profile_id,
                "dest_port": pod.dest_port,
                "proto": SERVICE_PROTOCOLS.get(pod.dest_port, "TCP"),
                "started_at": pod.activated_at,
                "ended_at": t,
                "logs": [list(log) for log in pod.logs],
            })
        self.attribute_reward(self._completion(pod))

    def attribute_reward(self, completion: Completion) -> Transition:
        """Price a finished deployment and release its pending transition."""
        pod = completion.pod
        tr = self.ledger.pop(pod.pod_id, None)
        if tr is None:
            raise ConsistencyError(f"no pending transition for deployment {pod.pod_id}")
        cfg = self.reward_cfg
        L = completion.L
        if L == 0:
            if completion.reason == "inactivity_timeout":
                reward = terminal_penalties("inactivity_timeout", cfg)
            else:
                reward = deploy_reward(0, cfg)
        else:
            scores = []
            if self.anomaly_model is not None:
                x = session_features(pod.logs, pod.activated_at)
                scores.append(self.anomaly_model.score(x))
                self.anomaly_model.update(x)
            l_bar = self.l_bar.value(pod.dest_port) if cfg.rolling_L_bar else None
            cost = completion.runtime_cost * cfg.unit_cost
            reward = quality_reward(L, scores, cfg, cost=cost, L_bar=l_bar)
            self.l_bar.record(pod.dest_port, L)
        tr.info["L"] = L
        self._deploy_completions += 1
        self._finish(tr, reward, done=True)
        return tr

    def _finish(self, tr: Transition, reward: float, done: bool, next_state: AgentState | None = None) -> None:
        tr.complete(reward, done, next_state)
        self.metrics.cumulative_reward += tr.reward
        self.metrics.completed_transitions += 1
        if self.keep_transitions:
            self.transitions.append(tr)
        self.policy.remember(tr)

    # -- main step ---------------------------------------------------------

    def step(self, event: NetworkEvent) -> list[tuple]:
        """Process one telemetry event; returns a list of effect tuples."""
        t = event.timestamp
        if self.now is not None and t < self.now:
            raise OrderingError(f"event at t={t} arrived after t={self.now}")
        self._advance(t)
        self.now = t
        self.metrics.events += 1
        ip = event.src_ip
        self._events_per_ip[ip] = self._events_per_ip.get(ip, 0) + 1
        self._sample(t)

        fwd = self.forwarding.get(ip)
        if fwd is not None and fwd.covers(event):
            pod = self.pods[self.live_by_ip[ip]]
            pod.routed_events += 1
            self.metrics.routed_events += 1
            # routed telemetry keeps the pod alive but is not a captured command
            if pod.state == ACTIVE and t > pod.last_interaction_at:
                pod.last_interaction_at = t
                self._push(pod.deadline, _PRIO_DEADLINE, "deadline", pod.pod_id)
            return [("routed", pod.pod_id)]

        seq = self.extractor.observe(event)
        if ip in self.live_by_ip:
            # pod still provisioning, or port not served by it
            self.metrics.bypassed_events += 1
            return [("bypassed", self.live_by_ip[ip])]

        cluster = self.cluster()
        state = AgentState(seq.steps, seq.mask, cluster.runtime_features())
        prev = self.pending_waits.pop(ip, None)
        if prev is not None:
            self._finish(prev, 0.0, done=False, next_state=state)

        ctx = DecisionContext(event, self._events_per_ip[ip], cluster)
        action = self.policy.decide(state, ctx)
        promoted = False
        if self.policy.promotable and self.config.promote:
            action, promoted = promote_if_underutilized(action, cluster, self.config.promote_threshold)
        profile_id = self.ip_profiles.get(ip)
        tr = Transition(state, action, promoted=promoted, info={"src_ip": ip, "t": t, "profile": profile_id})
        self.metrics.decisions += 1
        counts = self._decisions_by_profile.setdefault(profile_id or "unknown", [0, 0])
        counts[0] += 1
        effects: list[tuple] = [("decision", action, promoted)]
        if action == WAIT:
            self.pending_waits[ip] = tr
            self._push(t + self.config.wait_silence, _PRIO_DEADLINE, "silence", (ip, t))
        else:
            counts[1] += 1
            self._deploy_decisions += 1
            self.metrics.promoted += int(promoted)
            pod = self.deploy(ip, t, dest_port=event.dest_port, promoted=promoted)
            if pod is None:
                tr.info["skipped"] = True
                self._deploy_completions += 1
                self._finish(tr, terminal_penalties("resource_skip", self.reward_cfg), done=True)
                effects.append(("skip", ip))
            else:
                self.ledger[pod.pod_id] = tr
                effects.append(("deploy", pod.pod_id))
        self.policy.after_decision()
        return effects

    def _sample(self, t: int) -> None:
        iv = self.config.timeseries_interval
        if self._next_sample is None:
            self._next_sample = (t // iv) * iv
        if t >= self._next_sample:
            c = self.cluster()
            self.timeseries.append(
                ((t // iv) * iv, c.active_pods, round(c.cpu_util, 6), self.metrics.deploys,
                 round(self.metrics.cumulative_reward, 9))
            )
            self._next_sample = (t // iv + 1) * iv

    # -- invariants --------------------------------------------------------

    def check_invariants(self) -> None:
        """Cheap structural checks; cost grows with live pods, not history."""
        ended = self._ended
        if self._pod_counter - ended != len(self.live_by_ip):
            raise ConsistencyError("live pod count differs from created minus ended")
        for ip, pod_id in self.live_by_ip.items():
            pod = self.pods[pod_id]
            if pod.state not in _LIVE or pod.src_ip != ip:
                raise ConsistencyError(f"live-pod index out of sync for {ip}")
        if self.forwarding.keys() != self.live_by_ip.keys():
            raise ConsistencyError("forwarding table differs from the live pod set")
        if len(self.live_by_ip) > self.config.capacity:
            raise ConsistencyError("live pods exceed capacity")

    # -- episode -----------------------------------------------------------

    def finish(self) -> RunResult:
        """Drain every scheduled happening so all transitions complete."""
        self._advance(None)
        if self.live_by_ip or self.ledger or self.pending_waits:
            raise ConsistencyError("run ended with live pods or pending transitions")
        if self._deploy_decisions != self._deploy_completions:
            raise ConsistencyError(
                f"{self._deploy_decisions} deploy decisions but {self._deploy_completions} rewarded completions"
            )
        m = self.metrics
        if m.deploys:
            m.deployment_efficiency = m.engaged_deploys / m.deploys
            m.mean_time_to_redirect = float(np.mean(self._redirect_times))
            m.median_time_to_redirect = float(statistics.median(self._redirect_times))
        if m.engaged_deploys:
            m.cost_per_engagement = m.total_runtime_cost / m.engaged_deploys
        engaging = {ip for ip in self._events_per_ip if self._engages(ip)}
        if self._deployed_ips:
            m.precision = len(self._deployed_ips & engaging) / len(self._deployed_ips)
        if engaging:
            m.recall = len(self._deployed_ips & engaging) / len(engaging)
        ips_by_profile: dict[str, int] = {}
        deployed_by_profile: dict[str, int] = {}
        for ip in self._events_per_ip:
            pid = self.ip_profiles.get(ip) or "unknown"
            ips_by_profile[pid] = ips_by_profile.get(pid, 0) + 1
            if ip in self._deployed_ips:
                deployed_by_profile[pid] = deployed_by_profile.get(pid, 0) + 1
        for pid in sorted(self._decisions_by_profile.keys() | ips_by_profile.keys()):
            dec, dep = self._decisions_by_profile.get(pid, [0, 0])
            m.per_profile[pid] = {
                "ips": ips_by_profile.get(pid, 0),
                "deployed_ips": deployed_by_profile.get(pid, 0),
                "decisions": dec,
                "deploy_decisions": dep,
                "deploy_rate": dep / dec if dec else None,
            }
        if isinstance(self.policy, RLPolicy):
            m.epsilon = self.policy.agent.epsilon
            if self.policy.losses:
                m.mean_loss = float(np.mean(self.policy.losses))
        return RunResult(m, self.sessions, self.timeseries, self.transitions)

    def _engages(self, ip: str) -> bool:
        prof = self.profiles.get(self.ip_profiles.get(ip, ""))
        return prof is not None and prof.kind.engages


def run_episode(
    trace: EventTrace,
    policy: Policy,
    config: WorldConfig | None = None,
    reward: RewardConfig | None = None,
    profiles: Iterable[AttackerProfile] = (),
    extractor: FeatureExtractor | None = None,
    anomaly_model: AutoencoderModel | None = None,
    check_invariants: bool = False,
    keep_transitions: bool = False,
) -> RunResult:
    orch = Orchestrator(
        policy, config, reward, profiles, trace.ip_profiles, extractor, anomaly_model, keep_transitions
    )
    for ev in trace.events:
        orch.step(ev)
        if check_invariants:
            orch.check_invariants()
    return orch.finish()
