"""Canonical attack chains, bot families and semantic versions.

A pod session becomes a :class:`CanonicalChain`: each shell action is
lowercased and masked, retries are merged and short loops compressed, and a
labelled multigraph is built with ``next`` edges between consecutive actions
and ``uses`` edges from an action to the resources it references.

Chains are compared with DTW over the token sequences and with an exact
graph edit distance. A :class:`FamilyStore` groups them incrementally:
clusters start provisional, become families once they have enough members,
and every later arrival may bump the family's version.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConsistencyError, FormatError, GraphTooLargeError, PreconditionError, ValidationError
from .events import InteractionLog

CYCLE = "<cycle>"
NEXT = "next"
USES = "uses"
RESOURCE_PREFIX = "res:"
MAX_GED_NODES = 25
STORE_VERSION = "honeyloop-families-1"

# -- normalization -------------------------------------------------------------

_TIMESTAMP = re.compile(
    r"\b\d{4}-\d{2}-\d{2}(?:[t ]\d{2}:\d{2}(?::\d{2}(?:\.\d+)?)?(?:z|[+-]\d{2}:?\d{2})?)?\b"
    r"|\b\d{1,2}:\d{2}:\d{2}\b"
)
_URL = re.compile(r"\b[a-z][a-z0-9+.-]*://\S+")
_IPV4 = re.compile(r"\b(?:\d{1,3}\.){3}\d{1,3}(?::\d+)?\b")
_HEX = re.compile(r"\b(?:0x)?[0-9a-f]{8,}\b")
_HOME = re.compile(r"(?:/home/[^/\s]+|/root|/users/[^/\s]+)(?=/|\s|$|[;|&])")
_NUMBER = re.compile(r"\b\d{3,}\b")
_SPACES = re.compile(r"\s+")
_SPLIT = re.compile(r"\s*(?:;|&&|\|\|)\s*")
_PATH = re.compile(r"(?:(?<=\s)|^)((?:<home>)?/[^\s;|&'\"]*)")
_PLACEHOLDER = re.compile(r"<(?:url|ip|hex)>")
_PLATFORMS = ("linux", "android", "windows", "freebsd", "openwrt", "darwin")
_PLATFORM = re.compile(r"\b(" + "|".join(_PLATFORMS) + r")\b")


def normalize_action(text: str) -> str:
    """Lowercase one action and mask the variable parts of it."""
    s = text.lower()
    s = _TIMESTAMP.sub(" ", s)
    s = _URL.sub("<url>", s)
    s = _IPV4.sub("<ip>", s)
    s = _HEX.sub("<hex>", s)
    s = _HOME.sub("<home>", s)
    s = _NUMBER.sub("<n>", s)
    return _SPACES.sub(" ", s).strip()


def split_actions(command: str) -> list[str]:
    """Split a shell line on ``;``, ``&&`` and ``||``; pipelines stay whole."""
    return [part for part in _SPLIT.split(command) if part.strip()]


def merge_retries(tokens: Sequence[str]) -> list[str]:
    out: list[str] = []
    for tok in tokens:
        if not out or out[-1] != tok:
            out.append(tok)
    return out


def compress_loops(tokens: Sequence[str], max_period: int = 3, min_repeats: int = 3) -> list[str]:
    """Replace a block repeated ``min_repeats`` or more times by one copy and a cycle marker."""
    toks = list(tokens)
    for period in range(1, max_period + 1):
        out: list[str] = []
        i = 0
        while i < len(toks):
            block = toks[i:i + period]
            reps = 1
            if len(block) == period:
                while toks[i + reps * period:i + (reps + 1) * period] == block:
                    reps += 1
            if reps >= min_repeats:
                out.extend(block)
                out.append(CYCLE)
                i += reps * period
            else:
                out.append(toks[i])
                i += 1
        toks = out
    return toks


def sequence_tokens(tokens: Sequence[str]) -> list[str]:
    """Alternate loop compression and retry merging until nothing changes."""
    toks = list(tokens)
    while True:
        nxt = merge_retries(compress_loops(toks))
        if nxt == toks:
            return toks
        toks = nxt


def resources_of(token: str) -> list[str]:
    """Resource labels referenced by a normalized action, in first-seen order."""
    found = [m.group(0) for m in _PLACEHOLDER.finditer(token)]
    found += [m.group(1) for m in _PATH.finditer(token) if len(m.group(1)) > 1]
    seen: dict[str, None] = {}
    for r in found:
        seen.setdefault(RESOURCE_PREFIX + r, None)
    return list(seen)


# -- graphs ----------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledGraph:
    """Directed multigraph. ``edges`` maps (u, v) to a sorted tuple of edge labels."""

    nodes: tuple[str, ...]
    edges: dict

    def __len__(self):
        return len(self.nodes)

    def __eq__(self, other):
        return isinstance(other, LabeledGraph) and self.nodes == other.nodes and self.edges == other.edges

    def __hash__(self):
        return hash((self.nodes, tuple(sorted(self.edges.items()))))

    @property
    def n_edges(self) -> int:
        return sum(len(v) for v in self.edges.values())

    def adjacency(self) -> list[list]:
        """Edge list ``[u, v, label]`` with node indices, for persistence."""
        return [[u, v, lab] for (u, v), labs in sorted(self.edges.items()) for lab in labs]

    @classmethod
    def from_adjacency(cls, nodes: Sequence[str], adjacency: Iterable[Sequence]) -> "LabeledGraph":
        acc: dict = {}
        for u, v, lab in adjacency:
            acc.setdefault((int(u), int(v)), []).append(str(lab))
        return cls(tuple(nodes), {k: tuple(sorted(v)) for k, v in acc.items()})


def chain_graph(tokens: Sequence[str]) -> LabeledGraph:
    labels: dict[str, int] = {}

    def node(label):
        return labels.setdefault(label, len(labels))

    edges: dict = {}
    for tok in tokens:
        node(tok)
    for a, b in zip(tokens, tokens[1:]):
        edges.setdefault((labels[a], labels[b]), []).append(NEXT)
    for tok in dict.fromkeys(tokens):
        for res in resources_of(tok):
            edges.setdefault((labels[tok], node(res)), []).append(USES)
    return LabeledGraph(tuple(labels), {k: tuple(sorted(v)) for k, v in sorted(edges.items())})


@dataclass(frozen=True)
class CanonicalChain:
    tokens: tuple[str, ...]
    graph: LabeledGraph
    sessions: tuple[str, ...] = ()
    proto: str = "TCP"
    dest_port: int | None = None
    first_seen: int = 0

    @property
    def verb(self) -> str:
        return self.tokens[0].split(" ", 1)[0].rsplit("/", 1)[-1] if self.tokens else ""

    @property
    def platform(self) -> str:
        for tok in self.tokens:
            m = _PLATFORM.search(tok)
            if m:
                return m.group(1)
        return "unknown"

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "nodes": list(self.graph.nodes),
            "adjacency": self.graph.adjacency(),
            "sessions": list(self.sessions),
            "proto": self.proto,
            "dest_port": self.dest_port,
            "first_seen": self.first_seen,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CanonicalChain":
        chain = make_chain(d["tokens"], d.get("sessions", ()), d.get("proto", "TCP"),
                           d.get("dest_port"), d.get("first_seen", 0))
        stored = LabeledGraph.from_adjacency(d.get("nodes", chain.graph.nodes), d.get("adjacency", chain.graph.adjacency()))
        if stored != chain.graph:
            raise ConsistencyError(f"stored graph for {chain.tokens[:2]}... does not match its tokens")
        return chain


def make_chain(tokens, sessions=(), proto="TCP", dest_port=None, first_seen=0) -> CanonicalChain:
    tokens = tuple(tokens)
    return CanonicalChain(tokens, chain_graph(tokens), tuple(sessions), proto, dest_port, int(first_seen))


def canonicalize(logs, sessions: Sequence[str] = (), proto: str = "TCP", dest_port: int | None = None) -> CanonicalChain:
    """Build the canonical chain for a session.

    ``logs`` may be interaction logs, raw command strings, or an existing
    chain (which is re-canonicalized, keeping its metadata).
    """
    first_seen = 0
    if isinstance(logs, CanonicalChain):
        sessions, proto, dest_port, first_seen = logs.sessions, logs.proto, logs.dest_port, logs.first_seen
        commands = list(logs.tokens)
    else:
        logs = list(logs)
        if not logs:
            raise PreconditionError("canonicalize needs at least one log entry")
        if isinstance(logs[0], str):
            commands = logs
        else:
            logs = [InteractionLog(*log) for log in logs]
            stamps = [log.timestamp for log in logs]
            if any(b < a for a, b in zip(stamps, stamps[1:])):
                raise PreconditionError("logs must be time-ordered")
            commands = [log.command for log in logs]
            first_seen = stamps[0]
    if not commands:
        raise PreconditionError("canonicalize needs at least one log entry")
    actions = [normalize_action(a) for c in commands for a in split_actions(c)]
    tokens = sequence_tokens([a for a in actions if a])
    if not tokens:
        raise PreconditionError("logs contain no commands")
    return make_chain(tokens, sessions, proto, dest_port, first_seen)


def chain_from_session(session: dict) -> CanonicalChain:
    """Canonical chain for one session record of a run result."""
    return canonicalize(
        [InteractionLog(*log) for log in session["logs"]],
        sessions=(str(session["session_id"]),),
        proto=session.get("proto", "TCP"),
        dest_port=session.get("dest_port"),
    )


# -- distances -------------------------------------------------------------------

def dtw_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """DTW over token sequences with 0/1 local cost; an empty side costs the other's length."""
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return max(n, m)
    inf = n + m + 1
    prev = [inf] * (m + 1)
    prev[0] = 0
    for i in range(1, n + 1):
        cur = [inf] * (m + 1)
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ai == b[j - 1] else 1
            cur[j] = cost + min(prev[j - 1], prev[j], cur[j - 1])
        prev = cur
    return prev[m]


def _multiset_distance(x: Sequence[str], y: Sequence[str]) -> int:
    """Unit-cost edit distance between two label multisets."""
    if not x or not y:
        return len(x) + len(y)
    common = sum((Counter(x) & Counter(y)).values())
    return max(len(x), len(y)) - common


def _incident(g: LabeledGraph) -> list[list[str]]:
    inc: list[list[str]] = [[] for _ in g.nodes]
    for (u, v), labs in g.edges.items():
        for lab in labs:
            inc[u].append("out:" + lab)
            inc[v].append("in:" + lab)
    return inc


def mapping_cost(g1: LabeledGraph, g2: LabeledGraph, f: dict) -> int:
    """Cost of the edit path induced by a partial injection ``f`` from g1 to g2."""
    images = {v: u for u, v in f.items() if v is not None}
    cost = sum(1 for u in range(len(g1)) if f.get(u) is None)
    cost += len(g2) - len(images)
    cost += sum(1 for u, v in f.items() if v is not None and g1.nodes[u] != g2.nodes[v])
    for (u, v), labs in g1.edges.items():
        fu, fv = f.get(u), f.get(v)
        if fu is None or fv is None:
            cost += len(labs)
        else:
            cost += _multiset_distance(labs, g2.edges.get((fu, fv), ()))
    for (a, b), labs in g2.edges.items():
        if a not in images or b not in images or (images[a], images[b]) not in g1.edges:
            cost += len(labs)
    return cost


def graph_edit_distance(g1: LabeledGraph, g2: LabeledGraph, max_nodes: int = MAX_GED_NODES,
                        cutoff: float | None = None) -> int:
    """Exact graph edit distance by depth-first branch and bound.

    Node and edge insertions, deletions and relabels all cost 1. Parallel
    edges between an ordered node pair are matched as label multisets.

    Each search node is bounded by the larger of two admissible estimates:
    label-multiset distances of the unmapped parts, and an assignment over
    the unmapped nodes where each substitution also pays half the distance
    between the two incident-edge label multisets. The assignment found at
    the root seeds the upper bound.

    With ``cutoff`` the search only certifies distances up to it: the
    result is exact when it is ``<= cutoff`` and otherwise merely some
    value above ``cutoff``.
    """
    for g in (g1, g2):
        if len(g) > max_nodes:
            raise GraphTooLargeError(f"graph with {len(g)} nodes is too large for exact GED (limit {max_nodes})")
    n1, n2 = len(g1), len(g2)
    if n1 == 0 or n2 == 0:
        return n1 + n2 + g1.n_edges + g2.n_edges
    e1, e2 = g1.edges, g2.edges
    inc1, inc2 = _incident(g1), _incident(g2)

    big = 1e6
    C = np.zeros((n1 + n2, n2 + n1))
    for u in range(n1):
        for v in range(n2):
            C[u, v] = (g1.nodes[u] != g2.nodes[v]) + 0.5 * _multiset_distance(inc1[u], inc2[v])
        C[u, n2:] = big
        C[u, n2 + u] = 1 + 0.5 * len(inc1[u])
    for v in range(n2):
        C[n1:, v] = big
        C[n1 + v, v] = 1 + 0.5 * len(inc2[v])

    def assignment(rows_u, cols_v):
        rows = list(rows_u) + [n1 + v for v in cols_v]
        cols = list(cols_v) + [n2 + u for u in rows_u]
        sub = C[np.ix_(rows, cols)]
        r, c = linear_sum_assignment(sub)
        return sub[r, c].sum(), rows, [cols[j] for j in c]

    root_cost, rows, cols = assignment(range(n1), range(n2))
    seed = {}
    for r, c in zip(rows, cols):
        if r < n1:
            seed[r] = c if c < n2 else None
    lower = math.ceil(root_cost - 1e-9)
    best = [mapping_cost(g1, g2, seed)]
    if best[0] <= lower:
        return best[0]
    if cutoff is not None:
        if lower > cutoff:
            return lower
        best[0] = min(best[0], math.floor(cutoff) + 1)

    deg = Counter({u: len(inc1[u]) for u in range(n1)})
    order = sorted(range(n1), key=lambda u: (-deg[u], u))
    rank = {u: i for i, u in enumerate(order)}
    # a g1 edge is charged once both of its endpoints are placed
    due: list[list] = [[] for _ in range(n1)]
    for (u, v), labs in e1.items():
        due[max(rank[u], rank[v])].append((u, v, labs))
    rest1 = [[] for _ in range(n1 + 1)]
    for k in range(n1 - 1, -1, -1):
        rest1[k] = rest1[k + 1] + [lab for _, _, labs in due[k] for lab in labs]

    mapping: dict[int, int | None] = {}
    used: set[int] = set()

    def remaining_g2_edges():
        return [lab for (u, v), labs in e2.items() if u not in used or v not in used for lab in labs]

    def bound(k):
        free = [v for v in range(n2) if v not in used]
        left1 = Counter(g1.nodes[u] for u in order[k:])
        left2 = Counter(g2.nodes[v] for v in free)
        nodes = max(sum(left1.values()), len(free)) - sum((left1 & left2).values())
        simple = nodes + _multiset_distance(rest1[k], remaining_g2_edges())
        if k == n1 or not free:
            return simple
        return max(simple, math.ceil(assignment(order[k:], free)[0] - 1e-9))

    def step_cost(u, v, k):
        cost = 1 if v is None or g1.nodes[u] != g2.nodes[v] else 0
        for a, b, labs in due[k]:
            fa, fb = mapping[a], mapping[b]
            if fa is None or fb is None:
                cost += len(labs)
            else:
                cost += _multiset_distance(labs, e2.get((fa, fb), ()))
        if v is not None:
            # g2 edges between two images with no g1 edge mapped onto them
            for w, fw in mapping.items():
                if fw is None or w == u:
                    continue
                for pair1, pair2 in (((u, w), (v, fw)), ((w, u), (fw, v))):
                    if pair1 not in e1 and pair2 in e2:
                        cost += len(e2[pair2])
            if (u, u) not in e1 and (v, v) in e2:
                cost += len(e2[(v, v)])
        return cost

    def place(u, v):
        mapping[u] = v
        if v is not None:
            used.add(v)

    def unplace(u, v):
        del mapping[u]
        if v is not None:
            used.discard(v)

    def search(k, acc):
        if k == n1:
            best[0] = min(best[0], acc + (n2 - len(used)) + len(remaining_g2_edges()))
            return
        if acc + bound(k) >= best[0]:
            return
        u = order[k]
        options = []
        for v in [v for v in range(n2) if v not in used] + [None]:
            place(u, v)
            options.append((step_cost(u, v, k), v is None, -1 if v is None else v, v))
            unplace(u, v)
        options.sort(key=lambda o: o[:3])
        for c, _, _, v in options:
            if acc + c >= best[0]:
                break
            place(u, v)
            search(k + 1, acc + c)
            unplace(u, v)

    search(0, 0)
    return best[0]


def chain_similarity(a: CanonicalChain, b: CanonicalChain, cutoff: float | None = None) -> tuple[int, int]:
    """(DTW distance, exact graph edit distance).

    ``cutoff`` is passed to :func:`graph_edit_distance`.
    """
    return dtw_distance(a.tokens, b.tokens), graph_edit_distance(a.graph, b.graph, cutoff=cutoff)


# -- versions --------------------------------------------------------------------

class VersionTuple(NamedTuple):
    major: int = 1
    minor: int = 0
    patch: int = 0

    def __str__(self):
        return f"{self.major}.{self.minor}.{self.patch}"

    @classmethod
    def parse(cls, text: str) -> "VersionTuple":
        m = re.fullmatch(r"(\d+)\.(\d+)\.(\d+)", text)
        if not m:
            raise FormatError(f"version {text!r} is not MAJOR.MINOR.PATCH")
        return cls(*(int(x) for x in m.groups()))

    def bump(self, kind: str) -> "VersionTuple":
        if kind == "major":
            return VersionTuple(self.major + 1, 0, 0)
        if kind == "minor":
            return VersionTuple(self.major, self.minor + 1, 0)
        if kind == "patch":
            return VersionTuple(self.major, self.minor, self.patch + 1)
        if kind == "none":
            return self
        raise ValidationError("kind", f"unknown bump {kind!r}")


@dataclass
class ChainThresholds:
    eps: float = 8.0
    min_pts: int = 3
    graph_weight: float = 1.0
    t_major: int = 4
    t_minor: int = 2
    max_representatives: int = 5
    min_span: int = 0  # sim-seconds between first and last member before promotion

    def validate(self) -> "ChainThresholds":
        if self.eps < 0:
            raise ValidationError("chains.eps", "must be >= 0")
        if self.min_pts < 1:
            raise ValidationError("chains.min_pts", "must be >= 1")
        if self.graph_weight < 0:
            raise ValidationError("chains.graph_weight", "must be >= 0")
        if self.t_major < 1 or self.t_minor < 1:
            raise ValidationError("chains.t_major", "thresholds must be >= 1")
        if self.max_representatives < 1:
            raise ValidationError("chains.max_representatives", "must be >= 1")
        if self.min_span < 0:
            raise ValidationError("chains.min_span", "must be >= 0")
        return self


def bump_kind(seq_dist: float, graph_dist: float, th: ChainThresholds) -> str:
    if graph_dist >= th.t_major:
        return "major"
    if seq_dist >= th.t_minor:
        return "minor"
    if seq_dist > 0 or graph_dist > 0:
        return "patch"
    return "none"


# -- families and the store ---------------------------------------------------

@dataclass
class Family:
    """A cluster of chains; provisional until it has enough support."""

    cluster_id: int
    representatives: list = field(default_factory=list)
    members: int = 0
    first_seen: int = 0
    last_seen: int = 0
    family_id: str | None = None
    version: VersionTuple | None = None
    protos: Counter = field(default_factory=Counter)
    ports: Counter = field(default_factory=Counter)
    history: list = field(default_factory=list)

    @property
    def promoted(self) -> bool:
        return self.family_id is not None

    @property
    def proto(self) -> str:
        return _dominant(self.protos, "TCP")

    @property
    def vector(self) -> str:
        return _slot(self.representatives[0].verb) if self.representatives else "unknown"

    @property
    def platform(self) -> str:
        for rep in self.representatives:
            if rep.platform != "unknown":
                return rep.platform
        return "unknown"

    def add_representative(self, chain: CanonicalChain, limit: int) -> None:
        if any(r.tokens == chain.tokens for r in self.representatives):
            return
        self.representatives.append(chain)
        del self.representatives[:-limit]

    def observe(self, chain: CanonicalChain) -> None:
        if self.members == 0:
            self.first_seen = chain.first_seen
        self.members += 1
        self.first_seen = min(self.first_seen, chain.first_seen)
        self.last_seen = max(self.last_seen, chain.first_seen)
        self.protos[chain.proto] += 1
        if chain.dest_port is not None:
            self.ports[int(chain.dest_port)] += 1

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "family_id": self.family_id,
            "version": None if self.version is None else str(self.version),
            "members": self.members,
            "first_seen": self.first_seen,
            "last_seen": self.last_seen,
            "protos": dict(sorted(self.protos.items())),
            "ports": {str(k): v for k, v in sorted(self.ports.items())},
            "history": list(self.history),
            "representatives": [r.to_dict() for r in self.representatives],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Family":
        return cls(
            cluster_id=int(d["cluster_id"]),
            representatives=[CanonicalChain.from_dict(r) for r in d["representatives"]],
            members=int(d["members"]),
            first_seen=int(d["first_seen"]),
            last_seen=int(d["last_seen"]),
            family_id=d["family_id"],
            version=None if d["version"] is None else VersionTuple.parse(d["version"]),
            protos=Counter(d.get("protos", {})),
            ports=Counter({int(k): v for k, v in d.get("ports", {}).items()}),
            history=list(d.get("history", [])),
        )


def _dominant(counter: Counter, default: str) -> str:
    if not counter:
        return default
    return min(counter.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def _slot(text: str) -> str:
    s = re.sub(r"[^a-z0-9-]+", "-", text.lower()).strip("-")
    return s or "unknown"


class Assignment(NamedTuple):
    cluster_id: int
    family_id: str | None
    promoted_now: bool
    distance: float | None
    seq_dist: int | None = None
    graph_dist: int | None = None


class FamilyStore:
    """All clusters seen so far, provisional ones included."""

    def __init__(self, thresholds: ChainThresholds | None = None):
        self.thresholds = (thresholds or ChainThresholds()).validate()
        self.clusters: list[Family] = []
        self._verb_counter: Counter = Counter()

    @property
    def families(self) -> list[Family]:
        return [c for c in self.clusters if c.promoted]

    def get(self, family_id: str) -> Family:
        for c in self.clusters:
            if c.family_id == family_id:
                return c
        raise KeyError(family_id)

    def _new_family_id(self, cluster: Family) -> str:
        verb = re.sub(r"[^a-z0-9]+", "", cluster.representatives[0].verb.lower()) or "bot"
        self._verb_counter[verb] += 1
        return f"{verb}kit{self._verb_counter[verb]}"

    def ingest(self, chain: CanonicalChain) -> tuple[Assignment, VersionTuple | None]:
        """Cluster a chain and, for an already promoted family, version it."""
        res = cluster_assign(chain, self)
        if res.family_id is None or res.promoted_now:
            return res, None
        return res, assign_version(chain, self.get(res.family_id), self.thresholds)

    def check(self) -> None:
        ids = [c.family_id for c in self.families]
        if len(ids) != len(set(ids)):
            raise ConsistencyError("duplicate family ids in store")
        for c in self.clusters:
            if c.promoted and (not c.representatives or c.version is None):
                raise ConsistencyError(f"family {c.family_id} lacks representatives or version")

    def to_dict(self) -> dict:
        return {
            "format": STORE_VERSION,
            "thresholds": self.thresholds.__dict__.copy(),
            "verb_counter": dict(sorted(self._verb_counter.items())),
            "clusters": [c.to_dict() for c in self.clusters],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FamilyStore":
        if d.get("format") != STORE_VERSION:
            raise FormatError(f"family store format {d.get('format')!r}, expected {STORE_VERSION!r}")
        store = cls(ChainThresholds(**d["thresholds"]))
        store._verb_counter = Counter(d.get("verb_counter", {}))
        store.clusters = [Family.from_dict(c) for c in d["clusters"]]
        store.check()
        return store

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    @classmethod
    def load(cls, path) -> "FamilyStore":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a family store ({exc})") from None
        return cls.from_dict(data)


def _nearest(chain: CanonicalChain, reps: Sequence[CanonicalChain], graph_weight: float, eps: float | None = None):
    """(combined, graph_dist, seq_dist) to the closest representative.

    With ``eps`` only representatives within that combined distance count,
    which lets the graph search stop early on distant pairs.
    """
    best = None
    for rep in reps:
        sd = dtw_distance(chain.tokens, rep.tokens)
        cutoff = None
        if eps is not None:
            if sd > eps:
                continue
            cutoff = (eps - sd) / graph_weight if graph_weight > 0 else None
        gd = graph_edit_distance(chain.graph, rep.graph, cutoff=cutoff)
        key = (sd + graph_weight * gd, gd, sd)
        if eps is not None and key[0] > eps:
            continue
        if best is None or key < best:
            best = key
    return best


def cluster_assign(chain: CanonicalChain, store: FamilyStore, eps: float | None = None,
                   min_pts: int | None = None) -> Assignment:
    """Representative-linkage density rule.

    The chain joins the nearest cluster whose closest representative lies
    within ``eps`` (ties go to the older cluster); otherwise it opens a new
    provisional cluster. A provisional cluster is promoted to a family at
    version 1.0.0 once it has ``min_pts`` members spanning ``min_span``.
    """
    th = store.thresholds
    eps = th.eps if eps is None else eps
    min_pts = th.min_pts if min_pts is None else min_pts
    choice = None
    for cluster in store.clusters:
        d = _nearest(chain, cluster.representatives, th.graph_weight, eps)
        if d is not None and (choice is None or d < choice[0]):
            choice = (d, cluster)
    if choice is None:
        cluster = Family(cluster_id=len(store.clusters))
        store.clusters.append(cluster)
        dist = None
        seq_dist = graph_dist = None
    else:
        (dist, graph_dist, seq_dist), cluster = choice
    cluster.observe(chain)
    promoted_now = False
    if not cluster.promoted:
        cluster.add_representative(chain, th.max_representatives)
        if cluster.members >= min_pts and cluster.last_seen - cluster.first_seen >= th.min_span:
            cluster.family_id = store._new_family_id(cluster)
            cluster.version = VersionTuple(1, 0, 0)
            cluster.history.append(str(cluster.version))
            promoted_now = True
    return Assignment(cluster.cluster_id, cluster.family_id, promoted_now, dist, seq_dist, graph_dist)


def assign_version(chain: CanonicalChain, family: Family, thresholds: ChainThresholds | None = None) -> VersionTuple:
    """Bump ``family``'s version by the chain's distance to its nearest representative."""
    th = thresholds or ChainThresholds()
    if not family.promoted:
        raise PreconditionError(f"cluster {family.cluster_id} is not a promoted family")
    best = _nearest(chain, family.representatives, th.graph_weight, th.eps)
    if best is None:
        best = _nearest(chain, family.representatives, th.graph_weight)
    _, gd, sd = best
    kind = bump_kind(sd, gd, th)
    family.version = family.version.bump(kind)
    if kind != "none":
        family.history.append(str(family.version))
    family.add_representative(chain, th.max_representatives)
    return family.version


# -- naming and export -------------------------------------------------------------

NAME_RE = re.compile(r"^ADLAH\.BOT\.([a-z0-9]+)\.([A-Z]+)\.([a-z0-9-]+)\.([a-z0-9-]+):(\d+)\.(\d+)\.(\d+)$")


class BotName(NamedTuple):
    family: str
    proto: str
    vector: str
    platform: str
    version: VersionTuple


def format_name(family, version: VersionTuple | None = None) -> str:
    """``ADLAH.BOT.<family>.<proto>.<vector>.<platform>:<MAJOR>.<MINOR>.<PATCH>``.

    ``family`` is a promoted :class:`Family` or a :class:`BotName`.
    """
    if isinstance(family, Family):
        if not family.promoted:
            raise PreconditionError(f"cluster {family.cluster_id} is not a promoted family")
        parts = BotName(family.family_id, family.proto, family.vector, family.platform, family.version)
    else:
        parts = BotName(*family)
    version = VersionTuple(*(version or parts.version))
    checks = (
        ("family", parts.family, r"[a-z0-9]+"),
        ("proto", parts.proto, r"[A-Z]+"),
        ("vector", parts.vector, r"[a-z0-9-]+"),
        ("platform", parts.platform or "unknown", r"[a-z0-9-]+"),
    )
    for name, value, pattern in checks:
        if not isinstance(value, str) or not re.fullmatch(pattern, value):
            raise FormatError(f"{name} component {value!r} must match {pattern}")
    if min(version) < 0:
        raise FormatError(f"version {version} has a negative component")
    return f"ADLAH.BOT.{parts.family}.{parts.proto}.{parts.vector}.{parts.platform or 'unknown'}:{version}"


def parse_name(name: str) -> BotName:
    m = NAME_RE.match(name)
    if not m:
        raise FormatError(f"{name!r} does not follow the ADLAH.BOT naming grammar")
    fam, proto, vector, platform, *ver = m.groups()
    return BotName(fam, proto, vector, platform, VersionTuple(*(int(v) for v in ver)))


def common_subsequence(sequences: Sequence[Sequence[str]]) -> list[str]:
    """Exact longest subsequence common to every sequence.

    The search walks states of "next occurrence" positions, so it only
    visits tuples reachable by matching a shared token. Ties are broken by
    the earliest position in the first sequence.
    """
    seqs = [list(s) for s in sequences]
    if not seqs:
        return []
    if len(seqs) == 1:
        return seqs[0]
    alphabet = set(seqs[0]).intersection(*map(set, seqs[1:]))
    if not alphabet:
        return []
    # nxt[j][i][tok] = first index >= i of tok in seqs[j]
    nxt = []
    for s in seqs:
        table = [None] * (len(s) + 1)
        cur: dict[str, int] = {}
        table[len(s)] = dict(cur)
        for i in range(len(s) - 1, -1, -1):
            if s[i] in alphabet:
                cur[s[i]] = i
            table[i] = dict(cur)
        nxt.append(table)
    memo: dict = {}

    def solve(pos):
        if pos in memo:
            return memo[pos]
        best: tuple = ()
        cands = sorted(nxt[0][pos[0]].items(), key=lambda kv: kv[1])
        for tok, i0 in cands:
            new = [i0 + 1]
            for j in range(1, len(seqs)):
                k = nxt[j][pos[j]].get(tok)
                if k is None:
                    break
                new.append(k + 1)
            else:
                tail = solve(tuple(new))
                if len(tail) + 1 > len(best):
                    best = (tok,) + tail
        memo[pos] = best
        return best

    return list(solve(tuple(0 for _ in seqs)))


def export_signature(family: Family) -> dict:
    """Behavioral rule for a promoted family."""
    if not family.promoted:
        raise PreconditionError(f"cluster {family.cluster_id} is not a promoted family")
    rule = common_subsequence([r.tokens for r in family.representatives])
    ports = sorted(family.ports, key=lambda p: (-family.ports[p], p))
    return {
        "name": format_name(family),
        "family": family.family_id,
        "version": str(family.version),
        "rule": rule,
        "proto": family.proto,
        "ports": ports,
        "members": family.members,
        "warning": "empty common subsequence" if not rule else None,
    }


def export_store(store: FamilyStore) -> tuple[list[str], list[str]]:
    """Names and one-line JSON signature records for every family."""
    names, records = [], []
    for fam in sorted(store.families, key=lambda f: f.family_id):
        names.append(format_name(fam))
        records.append(json.dumps(export_signature(fam), sort_keys=True))
    return names, records
