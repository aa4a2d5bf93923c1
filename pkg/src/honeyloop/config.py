"""Run configuration: one JSON document that fully determines a run."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .agent import AgentConfig
from .chains import ChainThresholds
from .errors import ConfigurationError, ValidationError
from .events import DEFAULT_MIX, AttackerProfile, default_profiles
from .neural import NetworkSpec
from .orchestrator import WorldConfig
from .valuation import RewardConfig

SCHEMA_VERSION = 1

_SECTIONS = {
    "world": WorldConfig,
    "reward": RewardConfig,
    "agent": AgentConfig,
    "network": NetworkSpec,
    "chains": ChainThresholds,
}

DEFAULT_COMPARE = ("never_deploy", "always_deploy", "threshold:3", "random:0.5")


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    horizon: int = 86400
    n_ips: int = 400
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    # explicit profile list; replaces the default calibration set when given
    profiles: list | None = None
    policy: str = "rl_agent"
    compare_policies: list = field(default_factory=lambda: list(DEFAULT_COMPARE))
    episodes: int = 1
    out_dir: str = "runs"
    anomaly_model: bool = False
    world: WorldConfig = field(default_factory=WorldConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    chains: ChainThresholds = field(default_factory=ChainThresholds)

    def validate(self) -> "RunConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ValidationError("schema_version", f"expected {SCHEMA_VERSION}, got {self.schema_version}")
        for name in ("seed", "horizon", "n_ips", "episodes"):
            if not isinstance(getattr(self, name), int) or isinstance(getattr(self, name), bool):
                raise ValidationError(name, f"must be an integer, got {getattr(self, name)!r}")
        if self.horizon <= 0:
            raise ValidationError("horizon", f"must be > 0, got {self.horizon}")
        if self.n_ips < 0:
            raise ValidationError("n_ips", "must be >= 0")
        if self.episodes < 1:
            raise ValidationError("episodes", f"must be >= 1, got {self.episodes}")
        if self.world.seed != self.seed:
            self.world = dataclasses.replace(self.world, seed=self.seed)
        for section in ("world", "reward", "agent", "chains"):
            try:
                getattr(self, section).validate()
            except ConfigurationError as exc:
                raise ValidationError(section, str(exc)) from None
        self.build_profiles()
        return self

    def build_profiles(self) -> list[AttackerProfile]:
        try:
            if self.profiles is not None:
                return [AttackerProfile.from_dict(p) for p in self.profiles]
            return default_profiles(self.n_ips, self.mix)
        except (ConfigurationError, TypeError, KeyError, ValueError) as exc:
            raise ValidationError("profiles" if self.profiles is not None else "mix", str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["world"]["service_ports"] is not None:
            d["world"]["service_ports"] = list(d["world"]["service_ports"])
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(unknown[0], "unknown configuration key")
        if "schema_version" not in data:
            raise ValidationError("schema_version", "missing")
        for name, kind in _SECTIONS.items():
            if name in data:
                section = data[name]
                if not isinstance(section, dict):
                    raise ValidationError(name, "must be an object")
                fields = {f.name for f in dataclasses.fields(kind)}
                bad = sorted(set(section) - fields)
                if bad:
                    raise ValidationError(f"{name}.{bad[0]}", "unknown configuration key")
                if name == "world" and section.get("service_ports") is not None:
                    section = {**section, "service_ports": tuple(section["service_ports"])}
                data[name] = kind(**section)
        return cls(**data).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ValidationError(str(path), "config file not found") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(str(path), f"not valid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ValidationError(str(path), "config must be a JSON object")
        return cls.from_dict(data)
