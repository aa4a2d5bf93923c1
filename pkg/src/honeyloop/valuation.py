"""Rewards for finished deployments and session anomaly scoring.

Three reward modes are available:

``base``
    ``alpha * min(L / L_bar, L_max)`` for ``L > 0`` and ``-delta`` otherwise.
``future``
    ``base + beta * clip(Agg(scores), 0, A_max)``.
``eq2``
    ``(1 + omega * A~) * L - lambda_cost * C`` where ``A~`` is the aggregate
    clipped to [0, 1] and ``C`` the engagement cost.

``Agg`` is a trimmed mean. Deployments that hit the inactivity timeout
without a single log get ``-timeout_penalty`` in place of ``-delta``.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import neural
from .errors import ConfigurationError, ValidationError
from .events import InteractionLog
from .features import payload_stats

REWARD_MODES = ("base", "future", "eq2")


@dataclass
class RewardConfig:
    mode: str = "base"
    alpha: float = 1.0
    L_bar: float = 10.0
    L_max: float = 5.0
    delta: float = 0.1
    beta: float = 0.0
    A_max: float = 1.0
    omega: float = 0.0
    lambda_cost: float = 0.0
    unit_cost: float = 1.0  # cost per pod sim-minute, for C
    skip_penalty: float = 0.05
    timeout_penalty: float = 0.05
    trim: float = 0.1
    rolling_L_bar: bool = False
    rolling_window: int = 100

    def validate(self) -> "RewardConfig":
        if self.mode not in REWARD_MODES:
            raise ConfigurationError(f"reward.mode must be one of {REWARD_MODES}, got {self.mode!r}")
        if self.alpha <= 0:
            raise ConfigurationError("reward.alpha must be > 0")
        if self.L_bar <= 0:
            raise ConfigurationError("reward.L_bar must be > 0")
        for name in ("L_max", "delta", "beta", "A_max", "omega", "lambda_cost", "unit_cost",
                     "skip_penalty", "timeout_penalty"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"reward.{name} must be >= 0")
        if not 0.0 <= self.trim < 0.5:
            raise ConfigurationError("reward.trim must be in [0, 0.5)")
        if self.rolling_window < 1:
            raise ConfigurationError("reward.rolling_window must be >= 1")
        return self


def trimmed_mean(values: Sequence[float], trim: float = 0.1) -> float:
    """Mean after dropping ``ceil(n * trim)`` values from each end.

    At least one value is always kept; an empty input aggregates to 0.
    """
    xs = sorted(float(v) for v in values)
    n = len(xs)
    if n == 0:
        return 0.0
    k = min(math.ceil(n * trim - 1e-9), (n - 1) // 2)
    kept = xs[k:n - k]
    return sum(kept) / len(kept)


def _check_scores(scores):
    scores = [float(s) for s in scores]
    for s in scores:
        if not math.isfinite(s) or s < 0:
            raise ValidationError("anomaly_scores", f"scores must be finite and >= 0, got {s}")
    return scores


def deploy_reward(L: float, cfg: RewardConfig, L_bar: float | None = None) -> float:
    if L < 0:
        raise ValidationError("L", f"log count must be >= 0, got {L}")
    if L == 0:
        return -cfg.delta
    lb = cfg.L_bar if L_bar is None else L_bar
    return cfg.alpha * min(L / lb, cfg.L_max)


def quality_reward(
    L: float,
    anomaly_scores: Sequence[float],
    cfg: RewardConfig,
    mode: str | None = None,
    cost: float = 0.0,
    L_bar: float | None = None,
) -> float:
    """Quality-aware reward in ``future`` or ``eq2`` form (``cfg.mode`` by default)."""
    mode = mode or cfg.mode
    scores = _check_scores(anomaly_scores)
    if L < 0:
        raise ValidationError("L", f"log count must be >= 0, got {L}")
    agg = trimmed_mean(scores, cfg.trim)
    if mode == "future":
        return deploy_reward(L, cfg, L_bar) + cfg.beta * min(max(agg, 0.0), cfg.A_max)
    if mode == "eq2":
        a_tilde = min(max(agg, 0.0), 1.0)
        return (1.0 + cfg.omega * a_tilde) * L - cfg.lambda_cost * cost
    if mode == "base":
        return deploy_reward(L, cfg, L_bar)
    raise ConfigurationError(f"unknown reward mode {mode!r}")


def terminal_penalties(kind: str, cfg: RewardConfig) -> float:
    """Reward for a deployment that ended idle or was never started."""
    if kind == "inactivity_timeout":
        return -cfg.timeout_penalty
    if kind == "resource_skip":
        return -cfg.skip_penalty
    raise ValidationError("kind", f"expected 'inactivity_timeout' or 'resource_skip', got {kind!r}")


class RollingLBar:
    """Per-port rolling median of log counts over recent engaged deployments."""

    def __init__(self, default: float, window: int = 100):
        self.default = default
        self.window = window
        self._hist: dict[int, deque] = defaultdict(lambda: deque(maxlen=self.window))

    def value(self, port: int) -> float:
        h = self._hist.get(port)
        if not h:
            return self.default
        med = float(np.median(h))
        return med if med > 0 else self.default

    def record(self, port: int, L: float) -> None:
        if L > 0:
            self._hist[port].append(float(L))


# -- session features ----------------------------------------------------------

SESSION_DIM = 8
_DOWNLOAD = re.compile(r"\b(wget|curl|tftp|ftpget|scp)\b")
KNOWN_VERBS = frozenset(
    "cd ls cat echo sh bash busybox wget curl tftp ftpget chmod chown rm mv cp mkdir ps kill "
    "uname whoami id grep wc tar gzip nohup crontab history export unset passwd enable system "
    "shell free top nproc lscpu w uptime ifconfig netstat ss sleep scp".split()
)


def session_features(logs: Sequence[InteractionLog], started_at: int | None = None) -> np.ndarray:
    """Eight-number summary of one pod session.

    Entries: log1p(command count), log1p(distinct commands),
    log1p(duration s), log1p(download commands), log1p(mean gap s),
    mean command byte entropy / 8, share of commands with a known verb,
    and share of commands that look failed (empty, non-printable, or an
    immediate retry).
    """
    if not logs:
        return np.zeros(SESSION_DIM)
    cmds = [log.command for log in logs]
    ts = [log.timestamp for log in logs]
    t0 = ts[0] if started_at is None else started_at
    duration = max(0, ts[-1] - t0)
    gaps = np.diff([t0] + ts)
    verbs = [c.strip().split(" ", 1)[0].rsplit("/", 1)[-1] if c.strip() else "" for c in cmds]
    failed = 0
    for i, c in enumerate(cmds):
        raw = c.encode("utf-8", "replace")
        if not c.strip() or payload_stats(raw)[2] > 0 or (i and c == cmds[i - 1]):
            failed += 1
    n = len(cmds)
    return np.array([
        math.log1p(n),
        math.log1p(len(set(cmds))),
        math.log1p(duration),
        math.log1p(sum(1 for c in cmds if _DOWNLOAD.search(c))),
        math.log1p(float(np.mean(gaps))),
        float(np.mean([payload_stats(c.encode("utf-8", "replace"))[1] for c in cmds])) / 8.0,
        sum(1 for v in verbs if v in KNOWN_VERBS) / n,
        failed / n,
    ])


# -- autoencoder -----------------------------------------------------------------

class AutoencoderModel:
    """dense(d -> k, tanh) -> dense(k -> d, linear), trained one sample at a time."""

    def __init__(self, dim: int = SESSION_DIM, latent: int = 4, learning_rate: float = 0.005, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.params = {
            "W_enc": neural.glorot(rng, dim, latent),
            "b_enc": np.zeros(latent),
            "W_dec": neural.glorot(rng, latent, dim),
            "b_dec": np.zeros(dim),
        }
        self.adam = neural.AdamState(learning_rate=learning_rate, clip_norm=10.0)
        self.updates = 0

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValidationError("x", f"expected {self.dim} features, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("x", "feature vector contains non-finite values")
        return x

    def _forward(self, x):
        p = self.params
        z, c1 = neural.dense_forward(x, p["W_enc"], p["b_enc"])
        e = np.tanh(z)
        y, c2 = neural.dense_forward(e, p["W_dec"], p["b_dec"])
        return y, (c1, e, c2)

    def reconstruct(self, x) -> np.ndarray:
        return self._forward(self._check(x))[0]

    def score(self, x) -> float:
        x = self._check(x)
        return mse_score(x, self.reconstruct(x))

    def update(self, x) -> float:
        """One Adam step on the reconstruction error of ``x``; returns the pre-step score."""
        x = self._check(x)[None]
        p = self.params
        y, (c1, e, c2) = self._forward(x)
        dy = 2.0 * (y - x) / self.dim
        de, dW_dec, db_dec = neural.dense_backward(c2, dy, p["W_dec"])
        dz = de * (1.0 - e * e)
        _, dW_enc, db_enc = neural.dense_backward(c1, dz, p["W_enc"])
        grads = {"W_enc": dW_enc, "b_enc": db_enc, "W_dec": dW_dec, "b_dec": db_dec}
        neural.adam_step(p, grads, self.adam)
        self.updates += 1
        return mse_score(x[0], y[0])

    def save(self, path) -> Path:
        return neural.save_checkpoint(
            path, {"autoencoder": self.params}, {"autoencoder": self.adam}, {"dim": self.dim, "updates": self.updates}
        )

    @classmethod
    def load(cls, path) -> "AutoencoderModel":
        nets, adam, extra = neural.load_checkpoint(path)
        params = nets["autoencoder"]
        model = cls(dim=extra["dim"], latent=params["W_enc"].shape[1])
        model.params = params
        model.adam = adam["autoencoder"]
        model.updates = extra["updates"]
        return model


def mse_score(x, y) -> float:
    """Mean squared difference between a vector and its reconstruction."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError("y", f"reconstruction shape {y.shape} differs from input {x.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("x", "non-finite values")
    return float(np.mean((x - y) ** 2))


def anomaly_score(model: AutoencoderModel, x) -> float:
    return model.score(x)


def online_update(model: AutoencoderModel, x) -> AutoencoderModel:
    model.update(x)
    return model
