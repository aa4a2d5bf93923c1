"""Command-line entry point.

Every command takes its constants from a :class:`RunConfig`; ``--seed``,
``--episodes``, ``--out`` and ``--policy`` override the matching fields. All
outputs are byte-identical for identical configurations.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import statistics
import sys
from pathlib import Path

from . import __version__
from .agent import DQNAgent
from .chains import FamilyStore, chain_from_session, export_signature, format_name
from .config import RunConfig
from .errors import HoneyloopError, ValidationError
from .events import EventTrace, generate_trace, read_trace, write_trace
from .features import OBS_DIM, SEQ_LEN, FeatureExtractor, NormalizerState
from .orchestrator import RunResult, make_policy, run_episode
from .valuation import AutoencoderModel

CHECKPOINT = "agent.npz"
NORMALIZER = "normalizer.json"


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError("out_dir", f"cannot create {out}: {exc.strerror}") from None
    return out


def _write(path: Path, text: str) -> Path:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ValidationError(str(path), f"cannot write: {exc.strerror}") from None
    return path


def _fmt(value, digits=3) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def build_trace(cfg: RunConfig, episode: int = 0) -> EventTrace:
    """Trace for episode ``episode``: seeded with ``seed + episode``."""
    return generate_trace(cfg.build_profiles(), cfg.horizon, cfg.seed + episode)


def trace_summary(trace: EventTrace) -> dict:
    counts = list(trace.counts_per_ip().values())
    return {
        "events": len(trace),
        "ips": len(counts),
        "mean_events_per_ip": float(statistics.fmean(counts)) if counts else 0.0,
        "median_events_per_ip": float(statistics.median(counts)) if counts else 0.0,
        "seed": trace.seed,
    }


def _check_network(cfg: RunConfig) -> None:
    if cfg.network.obs_dim != OBS_DIM or cfg.network.seq_len != SEQ_LEN:
        raise ValidationError("network.obs_dim", f"observation layout is fixed at {SEQ_LEN} x {OBS_DIM}")


def _sessions_jsonl(result: RunResult) -> str:
    return "".join(json.dumps(s, sort_keys=True) + "\n" for s in result.sessions)


# -- commands ----------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> dict:
    out = _out(cfg)
    trace = build_trace(cfg)
    path = write_trace(trace, out / "trace.jsonl")
    summary = trace_summary(trace)
    _write(out / "trace_summary.json", _json(summary))
    print(
        f"wrote {summary['events']} events from {summary['ips']} IPs to {path}\n"
        f"events per IP: mean {summary['mean_events_per_ip']:.2f}, median {summary['median_events_per_ip']:.1f}"
    )
    return summary


def cmd_train(cfg: RunConfig, resume: str | None = None) -> list[dict]:
    _check_network(cfg)
    out = _out(cfg)
    if resume:
        agent = DQNAgent.load(resume)
        norm_path = Path(resume).with_name(NORMALIZER)
        norm = NormalizerState.load(norm_path) if norm_path.exists() else None
    else:
        agent = DQNAgent(cfg.agent, cfg.network, seed=cfg.seed)
        norm = None
    extractor = FeatureExtractor(norm)
    anomaly = AutoencoderModel(seed=cfg.seed) if cfg.anomaly_model else None
    profiles = cfg.build_profiles()
    policy = make_policy("rl_agent", agent=agent, promote=cfg.world.promote)
    rows = []
    start = agent.decisions
    for ep in range(cfg.episodes):
        extractor.reset_sessions()
        trace = generate_trace(profiles, cfg.horizon, cfg.seed + ep)
        policy.losses.clear()
        m = run_episode(trace, policy, cfg.world, cfg.reward, profiles, extractor, anomaly).metrics
        rows.append({
            "episode": ep,
            "decisions": m.decisions,
            "deploys": m.deploys,
            "cumulative_reward": m.cumulative_reward,
            "epsilon": agent.epsilon,
            "mean_loss": m.mean_loss,
            "deployment_efficiency": m.deployment_efficiency,
        })
        print(
            f"episode {ep}: decisions {m.decisions} deploys {m.deploys} "
            f"reward {m.cumulative_reward:.3f} epsilon {agent.epsilon:.4f} loss {_fmt(m.mean_loss, 5)}"
        )
    agent.save(out / CHECKPOINT, include_replay=True)
    extractor.norm.save(out / NORMALIZER)
    if anomaly is not None:
        anomaly.save(out / "anomaly.npz")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    _write(out / "train_metrics.csv", buf.getvalue())
    print(f"checkpoint {out / CHECKPOINT} after {agent.decisions - start} new decisions")
    return rows


def _load_agent(checkpoint: str | None, cfg: RunConfig):
    if not checkpoint:
        raise ValidationError("checkpoint", "evaluating rl_agent needs --checkpoint")
    path = Path(checkpoint)
    if not path.exists():
        raise ValidationError("checkpoint", f"{path} does not exist")
    agent = DQNAgent.load(path)
    norm_path = path.with_name(NORMALIZER)
    norm = NormalizerState.load(norm_path) if norm_path.exists() else None
    return agent, norm


def _policy_run(cfg: RunConfig, name: str, trace: EventTrace, checkpoint: str | None) -> RunResult:
    profiles = cfg.build_profiles()
    norm = None
    if name == "rl_agent":
        _check_network(cfg)
        if checkpoint:
            agent, norm = _load_agent(checkpoint, cfg)
            policy = make_policy(name, agent=agent, train=False, explore=False, promote=cfg.world.promote)
        else:
            agent = DQNAgent(cfg.agent, cfg.network, seed=cfg.seed)
            policy = make_policy(name, agent=agent, promote=cfg.world.promote)
    else:
        try:
            policy = make_policy(name, seed=cfg.seed)
        except (HoneyloopError, ValueError) as exc:
            raise ValidationError("policy", str(exc)) from None
    anomaly = AutoencoderModel(seed=cfg.seed) if cfg.anomaly_model else None
    return run_episode(trace, policy, cfg.world, cfg.reward, profiles, FeatureExtractor(norm), anomaly)


def cmd_evaluate(cfg: RunConfig, checkpoint: str | None = None, trace_path: str | None = None) -> dict:
    out = _out(cfg)
    trace = read_trace(trace_path) if trace_path else build_trace(cfg)
    result = _policy_run(cfg, cfg.policy, trace, checkpoint)
    _write(out / "metrics.json", _json(result.metrics.to_dict()))
    _write(out / "sessions.jsonl", _sessions_jsonl(result))
    _write(out / "timeseries.csv", result.timeseries_csv())
    m = result.metrics
    print(
        f"{m.policy}: decisions {m.decisions} deploys {m.deploys} efficiency {_fmt(m.deployment_efficiency)} "
        f"reward {m.cumulative_reward:.3f}"
    )
    return m.to_dict()


COMPARE_COLUMNS = (
    ("policy", "policy"),
    ("deploys", "deploys"),
    ("efficiency", "deployment_efficiency"),
    ("median_ttr_s", "median_time_to_redirect"),
    ("total_cost", "total_runtime_cost"),
    ("cost_per_eng", "cost_per_engagement"),
    ("reward", "cumulative_reward"),
    ("precision", "precision"),
    ("recall", "recall"),
)


def comparison_table(rows: list[dict]) -> str:
    cells = [[h for h, _ in COMPARE_COLUMNS]]
    cells += [[_fmt(r[k]) for _, k in COMPARE_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(COMPARE_COLUMNS))]
    lines = []
    for n, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_compare(cfg: RunConfig, policies: list[str] | None = None, checkpoint: str | None = None,
                trace_path: str | None = None) -> list[dict]:
    names = list(policies or cfg.compare_policies)
    if len(names) < 2:
        raise ValidationError("policy", f"compare needs at least two policies, got {names}")
    out = _out(cfg)
    trace = read_trace(trace_path) if trace_path else build_trace(cfg)
    rows = []
    for name in names:
        m = _policy_run(cfg, name, trace, checkpoint).metrics
        rows.append({k: getattr(m, k) for _, k in COMPARE_COLUMNS} | {"per_profile": m.per_profile})
    table = comparison_table(rows)
    _write(out / "compare.txt", table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([h for h, _ in COMPARE_COLUMNS])
    w.writerows([[("" if r[k] is None else r[k]) for _, k in COMPARE_COLUMNS] for r in rows])
    _write(out / "compare.csv", buf.getvalue())
    _write(out / "compare.json", _json(rows))
    sys.stdout.write(table)
    return rows


def load_sessions(paths) -> list[dict]:
    sessions = []
    for p in paths:
        try:
            with open(p, encoding="utf-8") as fh:
                for n, line in enumerate(fh, 1):
                    if line.strip():
                        try:
                            sessions.append(json.loads(line))
                        except json.JSONDecodeError as exc:
                            raise ValidationError(f"{p}:{n}", f"not JSON ({exc.msg})") from None
        except FileNotFoundError:
            raise ValidationError(str(p), "sessions file not found") from None
    return sessions


def cmd_export_chains(cfg: RunConfig, sessions_paths=None, store_path: str | None = None,
                      policy: str | None = None) -> dict:
    """Cluster session logs into families and write names and signatures.

    Without ``sessions_paths`` the configured trace is replayed under
    ``policy`` (``always_deploy`` by default) to produce the sessions.
    """
    out = _out(cfg)
    if sessions_paths:
        sessions = load_sessions(sessions_paths)
    else:
        sessions = _policy_run(cfg, policy or "always_deploy", build_trace(cfg), None).sessions
    store = FamilyStore.load(store_path) if store_path else FamilyStore(cfg.chains)
    bumps = []
    for s in sessions:
        if not s.get("logs"):
            continue
        chain = chain_from_session(s)
        res, version = store.ingest(chain)
        if version is not None:
            bumps.append({"session": s["session_id"], "family": res.family_id, "version": str(version)})
    store.save(out / "families.json")
    names, records = [], []
    for fam in sorted(store.families, key=lambda f: f.family_id):
        names.append(format_name(fam))
        records.append(json.dumps(export_signature(fam), sort_keys=True))
    _write(out / "names.txt", "".join(n + "\n" for n in names))
    _write(out / "signatures.jsonl", "".join(r + "\n" for r in records))
    if not sessions:
        print("no sessions with interaction logs; exported an empty family store")
    for n in names:
        print(n)
    return {"sessions": len(sessions), "families": names, "clusters": len(store.clusters), "versions": bumps}


# -- argument parsing -----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--episodes", type=int, help="override episode count")
    common.add_argument("--out", help="output directory")
    common.add_argument("--policy", action="append",
                        help="policy name (never_deploy, always_deploy, threshold:K, random:P, rl_agent); "
                             "repeat for compare")

    p = argparse.ArgumentParser(prog="honeyloop", description="Adaptive honeynet orchestration simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate a trace and print calibration stats")
    t = sub.add_parser("train", parents=[common], help="train the DQN agent")
    t.add_argument("--resume", help="checkpoint to continue from")
    e = sub.add_parser("evaluate", parents=[common], help="run one policy greedily and write metrics")
    e.add_argument("--checkpoint", help="agent checkpoint for rl_agent")
    e.add_argument("--trace", help="JSONL trace instead of a generated one")
    c = sub.add_parser("compare", parents=[common], help="replay one trace under several policies")
    c.add_argument("--checkpoint", help="agent checkpoint for rl_agent")
    c.add_argument("--trace", help="JSONL trace instead of a generated one")
    x = sub.add_parser("export-chains", parents=[common], help="cluster and version captured sessions")
    x.add_argument("--sessions", action="append", help="sessions.jsonl from evaluate (repeatable)")
    x.add_argument("--store", help="existing families.json to extend")
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.policy and args.command != "compare":
        if len(args.policy) > 1:
            raise ValidationError("policy", f"{args.command} takes a single --policy")
        overrides["policy"] = args.policy[0]
    return dataclasses.replace(cfg, **overrides).validate()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "train":
            cmd_train(cfg, resume=args.resume)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, checkpoint=args.checkpoint, trace_path=args.trace)
        elif args.command == "compare":
            cmd_compare(cfg, args.policy, checkpoint=args.checkpoint, trace_path=args.trace)
        elif args.command == "export-chains":
            cmd_export_chains(cfg, args.sessions, args.store, policy=args.policy[0] if args.policy else None)
        elif args.command == "show-config":
            sys.stdout.write(cfg.dumps())
    except HoneyloopError as exc:
        print(f"honeyloop {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
