"""Per-event observation vectors and masked per-source sequences.

Observation layout (163 dims)::

    0-5      flow duration, bytes to server, bytes to client, ttl,
             destination port, source port
    6        ASN
    7-38     src_cc indicator (hashed)
    39-70    tcp flag pattern indicator (hashed)
    71-86    flow state indicator (hashed)
    87-118   event type indicator (hashed)
    119-126  proto indicator (hashed)
    127-146  port category indicator
    147-151  5-minute activity: events, ports, protos, targets, syn ratio
    152-153  time of day sin, cos
    154      minutes since previous event of this source (capped)
    155-158  payload log1p(length), entropy/8, non-printable ratio, LZ77 ratio
    159-162  SHA-1 of payload as four 32-bit words scaled into [0, 1)

Only dims 0-6, 147-151 and 154 go through the online normalizer. Indicator
blocks stay in {0, 1}; time and payload features are bounded already.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import xxhash

from . import lz77
from .errors import FormatError, PreconditionError, ValidationError
from .events import NetworkEvent

OBS_DIM = 163
SEQ_LEN = 10
LAYOUT_VERSION = "obs-v1/163"

CORE = slice(0, 6)
ASN = 6
SRC_CC = slice(7, 39)
TCP_FLAGS = slice(39, 71)
FLOW_STATE = slice(71, 87)
EVENT_TYPE = slice(87, 119)
PROTO = slice(119, 127)
PORT_CATEGORY = slice(127, 147)
ACTIVITY = slice(147, 152)
TIME_SIN = 152
TIME_COS = 153
RECENCY = 154
PAYLOAD_STATS = slice(155, 159)
PAYLOAD_HASH = slice(159, 163)
PAYLOAD = slice(155, 163)

INDICATOR_BLOCKS = {
    "src_cc": SRC_CC,
    "tcp_flag_pattern": TCP_FLAGS,
    "flow_state": FLOW_STATE,
    "event_type": EVENT_TYPE,
    "proto": PROTO,
    "port_category": PORT_CATEGORY,
}
NORMALIZED_DIMS = np.array([0, 1, 2, 3, 4, 5, 6, 147, 148, 149, 150, 151, 154])

WINDOW_SECONDS = 300
RECENCY_CAP_MIN = 60.0
DEFAULT_CLIP = 5.0

NAMED_PORTS = {22: 3, 23: 4, 80: 5, 443: 6, 5060: 7, 123: 8}


def hashed_indicator(field_name: str, value: str, dims: int) -> int:
    """Slot for a categorical value: ``xxh64(field:value) mod dims``."""
    if dims <= 0:
        raise PreconditionError(f"dims must be > 0, got {dims}")
    return xxhash.xxh64_intdigest(f"{field_name}:{value}") % dims


@lru_cache(maxsize=4096)
def _indicator_cached(field_name: str, value: str, dims: int) -> int:
    return hashed_indicator(field_name, value, dims)


def port_category(port: int) -> int:
    if isinstance(port, bool) or not isinstance(port, (int, np.integer)) or not 0 <= port <= 65535:
        raise ValidationError("port", f"must be an integer in [0, 65535], got {port!r}")
    slot = NAMED_PORTS.get(int(port))
    if slot is not None:
        return slot
    if port <= 1023:
        return 0
    if port <= 49151:
        return 1
    return 2


@lru_cache(maxsize=8192)
def payload_stats(payload: bytes) -> tuple[int, float, float, float]:
    """(length, Shannon entropy in bits, non-printable ratio, LZ77 ratio)."""
    n = len(payload)
    if n == 0:
        return (0, 0.0, 0.0, 0.0)
    counts = np.bincount(np.frombuffer(payload, dtype=np.uint8), minlength=256)
    p = counts[counts > 0] / n
    entropy = float(-(p * np.log2(p)).sum())
    printable = int(counts[0x20:0x7F].sum())
    nonprintable = (n - printable) / n
    ratio = lz77.compressed_size(payload) / n
    return (n, max(entropy, 0.0), nonprintable, ratio)


@lru_cache(maxsize=8192)
def payload_hash_block(payload: bytes) -> tuple[float, float, float, float]:
    if not payload:
        return (0.0, 0.0, 0.0, 0.0)
    digest = hashlib.sha1(payload).digest()
    words = np.frombuffer(digest[:16], dtype=">u4")
    return tuple(float(w) * 2.0 ** -32 for w in words)


def time_features(timestamp: float) -> tuple[float, float]:
    angle = 2.0 * math.pi * ((timestamp % 86400) / 86400.0)
    return (math.sin(angle), math.cos(angle))


@dataclass
class NormalizerState:
    """Welford accumulators per observation dimension.

    Variance is the population variance ``M2 / count``.
    """

    count: np.ndarray = field(default_factory=lambda: np.zeros(OBS_DIM, dtype=np.int64))
    mean: np.ndarray = field(default_factory=lambda: np.zeros(OBS_DIM))
    m2: np.ndarray = field(default_factory=lambda: np.zeros(OBS_DIM))
    clip_bound: float = DEFAULT_CLIP

    def update(self, dim: int, x: float) -> "NormalizerState":
        self.count[dim] += 1
        delta = x - self.mean[dim]
        self.mean[dim] += delta / self.count[dim]
        self.m2[dim] += delta * (x - self.mean[dim])
        return self

    def update_many(self, dims: np.ndarray, xs: np.ndarray) -> None:
        # same recurrence as update(), elementwise over distinct dims
        self.count[dims] += 1
        delta = xs - self.mean[dims]
        self.mean[dims] += delta / self.count[dims]
        self.m2[dims] += delta * (xs - self.mean[dims])

    def variance(self, dim=None):
        count = self.count if dim is None else self.count[dim]
        m2 = self.m2 if dim is None else self.m2[dim]
        with np.errstate(invalid="ignore", divide="ignore"):
            var = np.where(count > 0, m2 / np.maximum(count, 1), 0.0)
        var = np.maximum(var, 0.0)
        return float(var) if dim is not None else var

    def normalize(self, dim: int, x: float) -> float:
        if self.count[dim] < 2:
            return 0.0
        std = max(math.sqrt(self.variance(dim)), 1e-6)
        z = (x - self.mean[dim]) / std
        return float(min(max(z, -self.clip_bound), self.clip_bound))

    def normalize_many(self, dims: np.ndarray, xs: np.ndarray) -> np.ndarray:
        count = self.count[dims]
        std = np.maximum(np.sqrt(np.maximum(self.m2[dims] / np.maximum(count, 1), 0.0)), 1e-6)
        z = np.clip((xs - self.mean[dims]) / std, -self.clip_bound, self.clip_bound)
        return np.where(count < 2, 0.0, z)

    def to_dict(self) -> dict:
        return {
            "layout": LAYOUT_VERSION,
            "clip_bound": self.clip_bound,
            "count": self.count.tolist(),
            "mean": self.mean.tolist(),
            "m2": self.m2.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizerState":
        if d.get("layout") != LAYOUT_VERSION:
            raise FormatError(f"normalizer layout {d.get('layout')!r} does not match {LAYOUT_VERSION!r}")
        state = cls(
            count=np.array(d["count"], dtype=np.int64),
            mean=np.array(d["mean"], dtype=np.float64),
            m2=np.array(d["m2"], dtype=np.float64),
            clip_bound=float(d["clip_bound"]),
        )
        if not (state.count.shape == state.mean.shape == state.m2.shape == (OBS_DIM,)):
            raise FormatError("normalizer arrays must each have length 163")
        return state

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "NormalizerState":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def update_welford(state: NormalizerState, dim: int, x: float) -> NormalizerState:
    return state.update(dim, x)


def normalize(state: NormalizerState, dim: int, x: float) -> float:
    return state.normalize(dim, x)


@dataclass
class RollingWindowState:
    """Last five minutes of activity per source address."""

    horizon: int = WINDOW_SECONDS
    entries: dict = field(default_factory=dict)
    last_event_time: dict = field(default_factory=dict)

    def _evict(self, dq: deque, now: int) -> None:
        cutoff = now - self.horizon
        while dq and dq[0][0] < cutoff:
            dq.popleft()

    def activity(self, event: NetworkEvent) -> tuple[int, int, int, int, float]:
        """Window statistics over retained entries plus ``event`` itself."""
        dq = self.entries.get(event.src_ip)
        items = []
        if dq:
            self._evict(dq, event.timestamp)
            items = list(dq)
        cur = _window_entry(event)
        items.append(cur)
        ports = {it[1] for it in items}
        protos = {it[2] for it in items}
        targets = {it[3] for it in items}
        tcp = sum(1 for it in items if it[5])
        syn = sum(1 for it in items if it[4])
        return (len(items), len(ports), len(protos), len(targets), syn / tcp if tcp else 0.0)

    def minutes_since_last(self, event: NetworkEvent) -> float:
        last = self.last_event_time.get(event.src_ip)
        if last is None:
            return RECENCY_CAP_MIN
        return min((event.timestamp - last) / 60.0, RECENCY_CAP_MIN)

    def record(self, event: NetworkEvent) -> None:
        dq = self.entries.setdefault(event.src_ip, deque())
        dq.append(_window_entry(event))
        self._evict(dq, event.timestamp)
        self.last_event_time[event.src_ip] = event.timestamp


def _window_entry(ev: NetworkEvent):
    is_tcp = ev.proto == "tcp"
    flags = ev.tcp_flag_pattern.upper()
    is_syn = is_tcp and "S" in flags and "A" not in flags
    return (ev.timestamp, ev.dest_port, ev.proto, ev.dest_ip, is_syn, is_tcp)


def _cat(value: str) -> str:
    return value if value else "missing"


def extract_observation(
    event: NetworkEvent,
    window: RollingWindowState,
    norm: NormalizerState,
    update_stats: bool = True,
) -> np.ndarray:
    """Observation vector for ``event``; records the event in ``window``.

    With ``update_stats`` the normalizer absorbs the raw values before they
    are scaled, so the very first samples of a dimension map to 0.
    """
    event.validate()
    obs = np.zeros(OBS_DIM)
    activity = window.activity(event)
    raw = np.array([
        event.flow_duration, event.bytes_toserver, event.bytes_toclient, event.ip_ttl,
        event.dest_port, event.src_port, event.asn, *activity, window.minutes_since_last(event),
    ], dtype=np.float64)
    if update_stats:
        norm.update_many(NORMALIZED_DIMS, raw)
    obs[NORMALIZED_DIMS] = norm.normalize_many(NORMALIZED_DIMS, raw)

    for name, block in INDICATOR_BLOCKS.items():
        width = block.stop - block.start
        if name == "port_category":
            slot = port_category(event.dest_port)
        else:
            slot = _indicator_cached(name, _cat(getattr(event, name)), width)
        obs[block.start + slot] = 1.0

    obs[TIME_SIN], obs[TIME_COS] = time_features(event.timestamp)

    if event.payload:
        length, entropy, nonprint, ratio = payload_stats(bytes(event.payload))
        obs[PAYLOAD_STATS] = (math.log1p(length), entropy / 8.0, nonprint, ratio)
        obs[PAYLOAD_HASH] = payload_hash_block(bytes(event.payload))

    window.record(event)
    return obs


@dataclass
class ObservationSequence:
    steps: np.ndarray
    mask: np.ndarray
    src_ip: str = ""


def build_sequence(history: Sequence[np.ndarray], src_ip: str = "") -> ObservationSequence:
    """Right-aligned window of the last ten observations, zero-padded."""
    if len(history) == 0:
        raise PreconditionError("history must contain at least one observation")
    recent = list(history)[-SEQ_LEN:]
    steps = np.zeros((SEQ_LEN, OBS_DIM))
    mask = np.zeros(SEQ_LEN, dtype=bool)
    steps[SEQ_LEN - len(recent):] = np.asarray(recent)
    mask[SEQ_LEN - len(recent):] = True
    return ObservationSequence(steps, mask, src_ip)


class FeatureExtractor:
    """Window, normalizer and per-source observation history bundled together."""

    def __init__(self, norm: NormalizerState | None = None, clip_bound: float = DEFAULT_CLIP):
        self.norm = norm if norm is not None else NormalizerState(clip_bound=clip_bound)
        self.window = RollingWindowState()
        self.history: dict[str, deque] = {}

    def observe(self, event: NetworkEvent, update_stats: bool = True) -> ObservationSequence:
        obs = extract_observation(event, self.window, self.norm, update_stats=update_stats)
        hist = self.history.setdefault(event.src_ip, deque(maxlen=SEQ_LEN))
        hist.append(obs)
        return build_sequence(hist, event.src_ip)

    def reset_sessions(self) -> None:
        """Forget windows and histories; keep normalizer statistics."""
        self.window = RollingWindowState()
        self.history = {}
