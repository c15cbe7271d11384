"""Actor-critic MLPs with hand-written backprop and the binary policy format.

Both networks map the 13-dim observation through two tanh hidden layers to a
linear head (6 wrench means for the actor, 1 value for the critic). The action
distribution is a diagonal Gaussian with a state-independent ``log_std``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from ffrl.env import ACT_DIM, OBS_DIM

HIDDEN = (64, 64)
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
MAX_POLICY_BYTES = 1 << 20

MAGIC = b"FFRL"
FORMAT_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class MlpParams:
    weights: list
    biases: list

    @classmethod
    def init(cls, rng, n_in, n_out, hidden=HIDDEN, out_gain=1.0, dtype=np.float32):
        sizes = (n_in,) + tuple(hidden) + (n_out,)
        weights, biases = [], []
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_gain if k == len(sizes) - 2 else math.sqrt(2.0)
            weights.append(_orthogonal(rng, a, b, gain).astype(dtype))
            biases.append(np.zeros(b, dtype=dtype))
        return cls(weights, biases)

    @classmethod
    def zeros_like(cls, other):
        return cls([np.zeros_like(w) for w in other.weights], [np.zeros_like(b) for b in other.biases])

    def tensors(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def astype(self, dtype):
        return MlpParams([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])


def _orthogonal(rng, n_in, n_out, gain):
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def mlp_forward(p, x):
    """Forward pass; returns the output and the activations needed by backprop."""
    acts = [x]
    h = x
    last = len(p.weights) - 1
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ w + b
        if k < last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_backward(p, acts, dout):
    """Gradients of a scalar loss given ``dout = dL/d(output)`` for a batch."""
    gw = [None] * len(p.weights)
    gb = [None] * len(p.biases)
    g = dout
    for k in range(len(p.weights) - 1, -1, -1):
        x = acts[k]
        gw[k] = x.T @ g if x.ndim > 1 else np.outer(x, g)
        gb[k] = g.sum(axis=0) if g.ndim > 1 else g
        if k > 0:
            g = (g @ p.weights[k].T) * (1.0 - np.square(acts[k]))
    return MlpParams(gw, gb)


@dataclass
class PolicyParams:
    actor: MlpParams
    critic: MlpParams | None
    log_std: np.ndarray

    @classmethod
    def init(cls, rng, hidden=HIDDEN, dtype=np.float32, init_log_std=0.0):
        return cls(
            actor=MlpParams.init(rng, OBS_DIM, ACT_DIM, hidden, out_gain=0.01, dtype=dtype),
            critic=MlpParams.init(rng, OBS_DIM, 1, hidden, out_gain=1.0, dtype=dtype),
            log_std=np.full(ACT_DIM, init_log_std, dtype=dtype),
        )

    def tensors(self):
        ts = list(self.actor.tensors())
        if self.critic is not None:
            ts += self.critic.tensors()
        return ts + [self.log_std]

    @classmethod
    def from_tensors(cls, ts):
        n = len(ts) - 1
        if n % 2:
            raise ValueError("tensor list must hold weight/bias pairs plus log_std")
        log_std = ts[-1]
        if n % 4 == 0 and n >= 4:
            half = n // 2
            actor = MlpParams(list(ts[0:half:2]), list(ts[1:half:2]))
            critic = MlpParams(list(ts[half:n:2]), list(ts[half + 1:n:2]))
            # a 4k-tensor body is actor+critic only if the second half ends in a 1-wide head
            if critic.weights[-1].shape[-1] == 1 and actor.weights[-1].shape[-1] == ACT_DIM:
                return cls(actor, critic, log_std)
        return cls(MlpParams(list(ts[0:n:2]), list(ts[1:n:2])), None, log_std)

    def actor_only(self):
        return PolicyParams(self.actor, None, self.log_std)

    def astype(self, dtype):
        return PolicyParams(
            self.actor.astype(dtype),
            None if self.critic is None else self.critic.astype(dtype),
            self.log_std.astype(dtype),
        )

    def copy(self):
        return PolicyParams.from_tensors([t.copy() for t in self.tensors()])

    def to_vector(self):
        return np.concatenate([t.ravel() for t in self.tensors()])

    def with_vector(self, vec):
        out, i = [], 0
        for t in self.tensors():
            out.append(np.asarray(vec[i:i + t.size], dtype=t.dtype).reshape(t.shape))
            i += t.size
        return PolicyParams.from_tensors(out)

    def is_finite(self):
        return all(np.isfinite(t).all() for t in self.tensors())


def scale_inputs(params, scale):
    """Fold a fixed per-feature input scale into the first layers.

    ``actor_forward(scale_inputs(p, s), x) == actor_forward(p, x * s)`` up to
    rounding, so a policy trained on scaled observations can be stored and
    run on raw ones.
    """
    scale = np.asarray(scale, dtype=params.log_std.dtype)[:, None]

    def fold(mlp):
        if mlp is None:
            return None
        return MlpParams([mlp.weights[0] * scale] + list(mlp.weights[1:]), list(mlp.biases))

    return PolicyParams(fold(params.actor), fold(params.critic), params.log_std)


def actor_forward(params, obs):
    obs = np.asarray(obs, dtype=params.log_std.dtype)
    mean, _ = mlp_forward(params.actor, obs)
    return mean, np.broadcast_to(params.log_std, mean.shape)


def critic_forward(params, obs):
    obs = np.asarray(obs, dtype=params.log_std.dtype)
    value, _ = mlp_forward(params.critic, obs)
    return value[..., 0]


def log_prob_and_entropy(mean, log_std, action):
    """Diagonal-Gaussian log density of ``action`` and the distribution entropy."""
    z = (np.asarray(action) - mean) * np.exp(-log_std)
    log_prob = -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std, axis=-1) - 0.5 * mean.shape[-1] * _LOG_2PI
    entropy = np.sum(log_std + 0.5 * (_LOG_2PI + 1.0), axis=-1)
    return log_prob, entropy


def sample_action(mean, log_std, rng):
    action = mean + np.exp(log_std) * rng.standard_normal(np.shape(mean))
    log_prob, _ = log_prob_and_entropy(mean, log_std, action)
    return action, log_prob


# --- binary format -----------------------------------------------------------


class PolicyFormatError(ValueError):
    """Malformed policy file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagicError(PolicyFormatError):
    pass


class VersionMismatchError(PolicyFormatError):
    pass


class ShapeMismatchError(PolicyFormatError):
    pass


class TruncatedError(PolicyFormatError):
    pass


def serialize(params):
    ts = params.tensors()
    parts = [MAGIC, struct.pack("<HH", FORMAT_VERSION, len(ts))]
    for t in ts:
        t = np.ascontiguousarray(t, dtype="<f4")
        parts.append(struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(t.tobytes(order="C"))
    return b"".join(parts)


def _take(buf, off, n):
    if off + n > len(buf):
        raise TruncatedError(f"need {n} bytes, {len(buf) - off} left", off)
    return buf[off:off + n], off + n


def deserialize(buf):
    buf = bytes(buf)
    head, off = _take(buf, 0, 4)
    if head != MAGIC:
        raise BadMagicError(f"bad magic {head!r}, expected {MAGIC!r}", 0)
    raw, off = _take(buf, off, 4)
    version, count = struct.unpack("<HH", raw)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, expected {FORMAT_VERSION}", 4)
    ts = []
    for _ in range(count):
        raw, off = _take(buf, off, 1)
        (rank,) = struct.unpack("<B", raw)
        if not 1 <= rank <= 2:
            raise ShapeMismatchError(f"tensor {len(ts)} has rank {rank}, expected 1 or 2", off - 1)
        raw, off = _take(buf, off, 4 * rank)
        shape = struct.unpack(f"<{rank}I", raw)
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        raw, off = _take(buf, off, nbytes)
        ts.append(np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32))
    if off != len(buf):
        raise PolicyFormatError(f"{len(buf) - off} trailing bytes", off)
    if count < 3:
        raise ShapeMismatchError(f"expected at least 3 tensors, got {count}", 6)
    params = PolicyParams.from_tensors(ts)
    _check_shapes(params)
    return params


def _check_shapes(params):
    def chain(mlp, n_in, n_out, name):
        prev = n_in
        for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            if w.ndim != 2 or w.shape[0] != prev or b.shape != (w.shape[1],):
                raise ShapeMismatchError(
                    f"{name} layer {k + 1}: weight {w.shape} / bias {b.shape} do not chain from width {prev}", 8
                )
            prev = w.shape[1]
        if prev != n_out:
            raise ShapeMismatchError(f"{name} output width {prev}, expected {n_out}", 8)

    chain(params.actor, OBS_DIM, ACT_DIM, "actor")
    if params.critic is not None:
        chain(params.critic, OBS_DIM, 1, "critic")
    if params.log_std.shape != (ACT_DIM,):
        raise ShapeMismatchError(f"log_std shape {params.log_std.shape}, expected ({ACT_DIM},)", 8)


def save_policy(path, params):
    blob = serialize(params)
    if len(blob) >= MAX_POLICY_BYTES:
        raise ValueError(f"policy is {len(blob)} bytes, limit is {MAX_POLICY_BYTES}")
    with open(path, "wb") as f:
        f.write(blob)
    return len(blob)


def load_policy(path):
    with open(path, "rb") as f:
        return deserialize(f.read())
