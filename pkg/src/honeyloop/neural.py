"""Small numpy network with hand-written gradients.

The Q-network is::

    (10 x 163 sequence, mask) -> LSTM(64) -> batch norm
        -> concat(3 runtime features) -> dense(64, relu) -> dropout(0.2)
        -> value stream (1) + advantage stream (2) -> Q = V + A - mean(A)

Layer functions come in ``*_forward`` / ``*_backward`` pairs so each can be
gradient-checked on its own. Everything is float64. The ReLU derivative at
exactly zero is taken as 0.
"""

from __future__ import annotations

import copy
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, NonFiniteGradientError, ShapeError

CHECKPOINT_VERSION = "honeyloop-ckpt-1"


def sigmoid(x):
    # tanh form is overflow-free
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# -- dense -------------------------------------------------------------------

def dense_forward(x, W, b):
    return x @ W + b, x


def dense_backward(cache, dy, W):
    x = cache
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


def relu_forward(z):
    return np.maximum(z, 0.0), z


def relu_backward(cache, dy):
    return dy * (cache > 0)


def dropout_forward(x, rate, rng):
    if rate <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(keep, dy):
    return dy if keep is None else dy * keep


# -- LSTM --------------------------------------------------------------------

def lstm_forward(x, mask, Wx, Wh, b):
    """Run the LSTM over ``x`` of shape (B, T, D); returns the last hidden state.

    Gate order in the fused kernels is input, forget, cell, output. Where
    ``mask`` is False the step is skipped and the carried state passes
    through unchanged.
    """
    B, T, D = x.shape
    H = Wh.shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    xw = (x.reshape(B * T, D) @ Wx).reshape(B, T, 4 * H)
    steps = []
    for t in range(T):
        m = mask[:, t][:, None]
        if not m.any():
            steps.append(None)
            continue
        z = xw[:, t] + h @ Wh + b
        sz = sigmoid(z)
        i, f, o = sz[:, :H], sz[:, H:2 * H], sz[:, 3 * H:]
        g = np.tanh(z[:, 2 * H:3 * H])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        steps.append((h, c, i, f, g, o, tc, m))
        c = np.where(m, c_new, c)
        h = np.where(m, h_new, h)
    return h, (x, steps)


def lstm_backward(cache, dh_last, Wx, Wh):
    x, steps = cache
    B, T, D = x.shape
    H = Wh.shape[0]
    dz_all = np.zeros((B, T, 4 * H))
    dWh = np.zeros_like(Wh)
    dh = dh_last
    dc = np.zeros((B, H))
    for t in reversed(range(T)):
        if steps[t] is None:
            continue
        h_prev, c_prev, i, f, g, o, tc, m = steps[t]
        dh_new = np.where(m, dh, 0.0)
        dc_carry = np.where(m, dc, 0.0)
        do = dh_new * tc
        dc_new = dc_carry + dh_new * o * (1.0 - tc * tc)
        dz = dz_all[:, t]
        dz[:, :H] = dc_new * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc_new * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc_new * i * (1.0 - g * g)
        dz[:, 3 * H:] = do * o * (1.0 - o)
        dWh += h_prev.T @ dz
        dh = dz @ Wh.T + np.where(m, 0.0, dh)
        dc = dc_new * f + np.where(m, 0.0, dc)
    flat = dz_all.reshape(B * T, 4 * H)
    dWx = x.reshape(B * T, D).T @ flat
    dx = (flat @ Wx.T).reshape(B, T, D)
    return dx, dWx, dWh, flat.sum(axis=0)


# -- batch norm --------------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, eps=1e-3):
    if train:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv, gamma, train), mu, var


def batchnorm_backward(cache, dy):
    xhat, inv, gamma, train = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    if not train:
        return dxhat * inv, dgamma, dbeta
    n = dy.shape[0]
    dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


# -- dueling head ------------------------------------------------------------

def dueling_combine(value, advantage):
    """Q = V + A - mean(A); ``value`` is (B, 1) and ``advantage`` (B, n)."""
    return value + advantage - advantage.mean(axis=1, keepdims=True)


def dueling_backward(dq):
    return dq.sum(axis=1, keepdims=True), dq - dq.mean(axis=1, keepdims=True)


# -- loss --------------------------------------------------------------------

def huber(prediction, target, delta=1.0):
    """Mean Huber loss over all elements."""
    e = np.asarray(prediction, dtype=float) - np.asarray(target, dtype=float)
    a = np.abs(e)
    return float(np.mean(np.where(a <= delta, 0.5 * e * e, delta * (a - 0.5 * delta))))


def huber_grad(prediction, target, delta=1.0):
    e = np.asarray(prediction, dtype=float) - np.asarray(target, dtype=float)
    return np.clip(e, -delta, delta) / e.size


# -- Q network ---------------------------------------------------------------

@dataclass(frozen=True)
class NetworkSpec:
    seq_len: int = 10
    obs_dim: int = 163
    runtime_dim: int = 3
    lstm_units: int = 64
    dense_units: int = 64
    n_actions: int = 2
    dropout: float = 0.2
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3


PARAM_NAMES = ("lstm_Wx", "lstm_Wh", "lstm_b", "bn_gamma", "bn_beta", "W1", "b1", "Wv", "bv", "Wa", "ba")


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    H, D, U = spec.lstm_units, spec.obs_dim, spec.dense_units
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0
    return {
        "lstm_Wx": glorot(rng, D, 4 * H),
        "lstm_Wh": glorot(rng, H, 4 * H),
        "lstm_b": b,
        "bn_gamma": np.ones(H),
        "bn_beta": np.zeros(H),
        "W1": glorot(rng, H + spec.runtime_dim, U),
        "b1": np.zeros(U),
        "Wv": glorot(rng, U, 1),
        "bv": np.zeros(1),
        "Wa": glorot(rng, U, spec.n_actions),
        "ba": np.zeros(spec.n_actions),
    }


@dataclass
class QNetwork:
    spec: NetworkSpec
    params: dict
    bn_mean: np.ndarray
    bn_var: np.ndarray

    @classmethod
    def create(cls, spec: NetworkSpec | None = None, seed: int = 0) -> "QNetwork":
        spec = spec or NetworkSpec()
        rng = np.random.default_rng(seed)
        return cls(spec, init_params(spec, rng), np.zeros(spec.lstm_units), np.ones(spec.lstm_units))

    def copy(self) -> "QNetwork":
        return copy.deepcopy(self)

    def load_state_from(self, other: "QNetwork") -> None:
        """Hard update: copy parameters and batch-norm statistics."""
        for k, v in other.params.items():
            self.params[k] = v.copy()
        self.bn_mean = other.bn_mean.copy()
        self.bn_var = other.bn_var.copy()

    def _check(self, seq, mask, runtime):
        s = self.spec
        seq = np.asarray(seq, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        runtime = np.asarray(runtime, dtype=np.float64)
        single = seq.ndim == 2
        if single:
            seq, mask, runtime = seq[None], mask[None], runtime[None]
        if seq.ndim != 3 or seq.shape[1:] != (s.seq_len, s.obs_dim):
            raise ShapeError(f"sequence must be (B, {s.seq_len}, {s.obs_dim}), got {seq.shape}")
        B = seq.shape[0]
        if mask.shape != (B, s.seq_len):
            raise ShapeError(f"mask must be ({B}, {s.seq_len}), got {mask.shape}")
        if runtime.shape != (B, s.runtime_dim):
            raise ShapeError(f"runtime must be ({B}, {s.runtime_dim}), got {runtime.shape}")
        return seq, mask, runtime, single

    def forward(self, seq, mask, runtime, train=False, rng=None, update_stats=True):
        """Q-values and a backward cache.

        In train mode dropout draws from ``rng`` and batch norm uses batch
        statistics (updating the running ones unless ``update_stats`` is
        False). Eval mode is deterministic.
        """
        seq, mask, runtime, single = self._check(seq, mask, runtime)
        p, s = self.params, self.spec
        h, lstm_cache = lstm_forward(seq, mask, p["lstm_Wx"], p["lstm_Wh"], p["lstm_b"])
        hb, bn_cache, mu, var = batchnorm_forward(
            h, p["bn_gamma"], p["bn_beta"], self.bn_mean, self.bn_var, train, s.bn_eps
        )
        if train and update_stats:
            m = s.bn_momentum
            self.bn_mean = m * self.bn_mean + (1.0 - m) * mu
            self.bn_var = m * self.bn_var + (1.0 - m) * var
        u = np.concatenate([hb, runtime], axis=1)
        z1, d1_cache = dense_forward(u, p["W1"], p["b1"])
        a1, relu_cache = relu_forward(z1)
        if train:
            if rng is None:
                raise ValueError("train-mode forward needs an rng for dropout")
            d, keep = dropout_forward(a1, s.dropout, rng)
        else:
            d, keep = a1, None
        v, _ = dense_forward(d, p["Wv"], p["bv"])
        a, _ = dense_forward(d, p["Wa"], p["ba"])
        q = dueling_combine(v, a)
        cache = (lstm_cache, bn_cache, d1_cache, relu_cache, keep, d)
        return (q[0] if single else q), cache

    def q_values(self, seq, mask, runtime):
        return self.forward(seq, mask, runtime, train=False)[0]

    def backward(self, cache, dq) -> dict[str, np.ndarray]:
        p, s = self.params, self.spec
        lstm_cache, bn_cache, d1_cache, relu_cache, keep, d = cache
        dq = np.asarray(dq, dtype=np.float64)
        if dq.ndim == 1:
            dq = dq[None]
        dv, da = dueling_backward(dq)
        grads = {
            "Wv": d.T @ dv, "bv": dv.sum(axis=0),
            "Wa": d.T @ da, "ba": da.sum(axis=0),
        }
        dd = dv @ p["Wv"].T + da @ p["Wa"].T
        da1 = dropout_backward(keep, dd)
        dz1 = relu_backward(relu_cache, da1)
        du, grads["W1"], grads["b1"] = dense_backward(d1_cache, dz1, p["W1"])
        dhb = du[:, :s.lstm_units]
        dh, grads["bn_gamma"], grads["bn_beta"] = batchnorm_backward(bn_cache, dhb)
        _, grads["lstm_Wx"], grads["lstm_Wh"], grads["lstm_b"] = lstm_backward(
            lstm_cache, dh, p["lstm_Wx"], p["lstm_Wh"]
        )
        return grads

    def input_gradient(self, cache, dq) -> np.ndarray:
        """Gradient of ``sum(dq * q)`` with respect to the input sequence."""
        p, s = self.params, self.spec
        lstm_cache, bn_cache, d1_cache, relu_cache, keep, d = cache
        dq = np.atleast_2d(dq)
        dv, da = dueling_backward(dq)
        dd = dv @ p["Wv"].T + da @ p["Wa"].T
        dz1 = relu_backward(relu_cache, dropout_backward(keep, dd))
        du, _, _ = dense_backward(d1_cache, dz1, p["W1"])
        dh, _, _ = batchnorm_backward(bn_cache, du[:, :s.lstm_units])
        dx, _, _, _ = lstm_backward(lstm_cache, dh, p["lstm_Wx"], p["lstm_Wh"])
        return dx


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 10.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def adam_step(params: dict, grads: dict, state: AdamState):
    """One clipped, bias-corrected Adam update, applied to ``params`` in place."""
    for k, g in grads.items():
        if k not in params:
            raise ShapeError(f"gradient for unknown parameter {k!r}")
        if np.shape(g) != params[k].shape:
            raise ShapeError(f"gradient {k!r} has shape {np.shape(g)}, parameter {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {k!r}; update rejected")
    scale = 1.0
    if state.clip_norm is not None:
        norm = global_norm(grads)
        if norm > state.clip_norm:
            scale = state.clip_norm / norm
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for k, g in grads.items():
        g = g * scale
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        params[k] -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# -- persistence -------------------------------------------------------------

def _pack(prefix, arrays, out):
    for k, v in arrays.items():
        out[f"{prefix}/{k}"] = v


def _unpack(prefix, data):
    n = len(prefix) + 1
    return {k[n:]: data[k].copy() for k in data.files if k.startswith(prefix + "/")}


def save_checkpoint(path, networks: dict, adam: dict | None = None, extra: dict | None = None) -> Path:
    """Write named networks and optimizer states to one ``.npz`` file.

    ``networks`` values are :class:`QNetwork` instances or plain parameter
    dicts; ``extra`` must be JSON-serializable.
    """
    arrays = {}
    meta = {"version": CHECKPOINT_VERSION, "networks": {}, "adam": {}, "extra": extra or {}}
    for name, net in networks.items():
        if isinstance(net, QNetwork):
            _pack(f"net:{name}/param", net.params, arrays)
            arrays[f"net:{name}/bn/mean"] = net.bn_mean
            arrays[f"net:{name}/bn/var"] = net.bn_var
            meta["networks"][name] = {"kind": "qnetwork", "spec": asdict(net.spec)}
        else:
            _pack(f"net:{name}/param", net, arrays)
            meta["networks"][name] = {"kind": "params"}
    for name, st in (adam or {}).items():
        _pack(f"adam:{name}/m", st.m, arrays)
        _pack(f"adam:{name}/v", st.v, arrays)
        meta["adam"][name] = {
            "learning_rate": st.learning_rate, "beta1": st.beta1, "beta2": st.beta2,
            "eps": st.eps, "clip_norm": st.clip_norm, "step": st.step,
        }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`: ``(networks, adam_states, extra)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        if "meta" not in data.files:
            raise FormatError(f"{path}: not a checkpoint (no meta record)")
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: checkpoint version {meta.get('version')!r} unsupported")
        networks = {}
        for name, info in meta["networks"].items():
            params = _unpack(f"net:{name}/param", data)
            if info["kind"] == "qnetwork":
                networks[name] = QNetwork(
                    NetworkSpec(**info["spec"]), params,
                    data[f"net:{name}/bn/mean"].copy(), data[f"net:{name}/bn/var"].copy(),
                )
            else:
                networks[name] = params
        adam = {}
        for name, info in meta["adam"].items():
            adam[name] = AdamState(
                m=_unpack(f"adam:{name}/m", data), v=_unpack(f"adam:{name}/v", data), **info
            )
    return networks, adam, meta["extra"]
