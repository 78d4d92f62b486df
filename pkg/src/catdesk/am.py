"""A small recurrent acoustic model with exact manual backpropagation.

Architecture: a linear input projection, one bidirectional gated recurrent
layer (GRU cells), and a linear output layer producing one score column per
emission symbol (blank first, then the labels).  Everything is plain float64
numpy so gradients can be checked against finite differences; the backward
pass is the exact reverse of the forward pass.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .loss import FrameLogits

DIRECTIONS = ("fw", "bw")
GATE_TENSORS = ("wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn")

CHECKPOINT_MAGIC = b"CDAM"
CHECKPOINT_VERSION = 1


def tensor_names() -> list[str]:
    """Declared parameter order, also the checkpoint serialization order."""
    names = ["w_in"]
    for d in DIRECTIONS:
        names.extend(f"{d}_{g}" for g in GATE_TENSORS)
    names += ["w_out", "b_out"]
    return names


class ModelParams:
    """Named parameter tensors plus the shape metadata they must satisfy."""

    def __init__(self, d_in: int, d_h: int, n_out: int,
                 tensors: dict[str, np.ndarray]):
        self.d_in = d_in
        self.d_h = d_h
        self.n_out = n_out
        self.tensors = tensors
        self.version = 0  # bumped on every in-place update
        self._validate()

    def _validate(self):
        shapes = expected_shapes(self.d_in, self.d_h, self.n_out)
        if set(self.tensors) != set(shapes):
            raise ValueError("parameter tensor names do not match the declared set")
        for name, shape in shapes.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {t.shape}")
            if not np.isfinite(t).all():
                raise ValueError(f"{name}: non-finite entries")

    @classmethod
    def init(cls, d_in: int, d_h: int, n_out: int, seed: int = 0) -> "ModelParams":
        """Uniform +-1/sqrt(fan-in) initialization, reproducible per seed."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in expected_shapes(d_in, d_h, n_out).items():
            fan_in = shape[0] if len(shape) == 2 else d_h
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(d_in, d_h, n_out, tensors)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.d_in, self.d_h, self.n_out,
                           {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def expected_shapes(d_in: int, d_h: int, n_out: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {"w_in": (d_in, d_h)}
    for d in DIRECTIONS:
        for g in GATE_TENSORS:
            shapes[f"{d}_{g}"] = (d_h,) if g.startswith("b") else (d_h, d_h)
    shapes["w_out"] = (2 * d_h, n_out)
    shapes["b_out"] = (n_out,)
    return shapes


def _sigmoid(x):
    # branch on sign so neither exp can overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class _DirectionCache:
    h_prev: np.ndarray  # (T, d_h) hidden state entering each step
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray  # h_prev @ Un, pre-gate candidate recurrence
    n: np.ndarray
    h: np.ndarray  # (T, d_h) hidden state leaving each step


@dataclass
class ForwardCache:
    params: ModelParams
    params_version: int
    features: np.ndarray
    proj: np.ndarray
    directions: dict[str, _DirectionCache] = field(default_factory=dict)
    hidden: np.ndarray | None = None  # (T, 2*d_h) concatenated trace


def _run_direction(params: ModelParams, prefix: str, proj: np.ndarray,
                   h0: np.ndarray) -> _DirectionCache:
    T, d_h = proj.shape
    wz, uz, bz = params[f"{prefix}_wz"], params[f"{prefix}_uz"], params[f"{prefix}_bz"]
    wr, ur, br = params[f"{prefix}_wr"], params[f"{prefix}_ur"], params[f"{prefix}_br"]
    wn, un, bn = params[f"{prefix}_wn"], params[f"{prefix}_un"], params[f"{prefix}_bn"]
    cache = _DirectionCache(*(np.zeros((T, d_h)) for _ in range(6)))
    h = h0
    for t in range(T):
        x = proj[t]
        z = _sigmoid(x @ wz + h @ uz + bz)
        r = _sigmoid(x @ wr + h @ ur + br)
        c = h @ un
        n = np.tanh(x @ wn + r * c + bn)
        h_new = (1.0 - z) * n + z * h
        cache.h_prev[t] = h
        cache.z[t], cache.r[t], cache.c[t], cache.n[t], cache.h[t] = z, r, c, n, h_new
        h = h_new
    return cache


def am_forward(params: ModelParams, features: np.ndarray,
               initial_states: tuple[np.ndarray, np.ndarray] | None = None):
    """Run the network over an utterance.

    Returns (logits, hidden trace of shape (T, 2, d_h), cache for backward).
    ``initial_states`` are the (forward, backward) entry states; zeros by
    default, which is the per-chunk reset policy.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.d_in:
        raise ValueError(f"features must be T x {params.d_in}, got {features.shape}")
    T = features.shape[0]
    if initial_states is None:
        h0_fw = np.zeros(params.d_h)
        h0_bw = np.zeros(params.d_h)
    else:
        h0_fw, h0_bw = (np.asarray(h, dtype=np.float64) for h in initial_states)
    proj = features @ params["w_in"]
    cache = ForwardCache(params, params.version, features, proj)
    cache.directions["fw"] = _run_direction(params, "fw", proj, h0_fw)
    bw = _run_direction(params, "bw", proj[::-1], h0_bw)
    cache.directions["bw"] = bw
    hidden = np.concatenate([cache.directions["fw"].h, bw.h[::-1]], axis=1)
    cache.hidden = hidden
    scores = hidden @ params["w_out"] + params["b_out"]
    trace = np.stack([cache.directions["fw"].h, bw.h[::-1]], axis=1)
    return FrameLogits.dense(scores), trace, cache


def am_backward(cache: ForwardCache, grad_logits: np.ndarray,
                grad_hidden: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Exact gradient of (loss via logits + optional loss via the hidden
    trace) with respect to every parameter tensor."""
    params = cache.params
    if cache.params_version != params.version:
        raise ValueError("stale forward cache: parameters were updated after the forward pass")
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    T = cache.features.shape[0]
    d_h = params.d_h
    if grad_logits.shape != (T, params.n_out):
        raise ValueError(f"grad_logits must be {(T, params.n_out)}, got {grad_logits.shape}")

    grads = params.zeros_like()
    hidden = cache.hidden
    grads["w_out"] = hidden.T @ grad_logits
    grads["b_out"] = grad_logits.sum(axis=0)
    d_hidden = grad_logits @ params["w_out"].T
    if grad_hidden is not None:
        grad_hidden = np.asarray(grad_hidden, dtype=np.float64)
        if grad_hidden.shape != (T, 2, d_h):
            raise ValueError(f"grad_hidden must be {(T, 2, d_h)}, got {grad_hidden.shape}")
        d_hidden = d_hidden + grad_hidden.reshape(T, 2 * d_h)

    dproj = np.zeros((T, d_h))
    for prefix in DIRECTIONS:
        dc = cache.directions[prefix]
        if prefix == "fw":
            dh_seq = d_hidden[:, :d_h]
            proj_seq = cache.proj
        else:
            dh_seq = d_hidden[::-1, d_h:]
            proj_seq = cache.proj[::-1]
        uz, ur, un = params[f"{prefix}_uz"], params[f"{prefix}_ur"], params[f"{prefix}_un"]
        wz, wr, wn = params[f"{prefix}_wz"], params[f"{prefix}_wr"], params[f"{prefix}_wn"]
        dproj_dir = np.zeros((T, d_h))
        dh = np.zeros(d_h)
        for t in range(T - 1, -1, -1):
            dh = dh + dh_seq[t]
            z, r, c, n = dc.z[t], dc.r[t], dc.c[t], dc.n[t]
            h_prev, x = dc.h_prev[t], proj_seq[t]
            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            dh_prev = dh * z
            da_n = dn * (1.0 - n * n)
            grads[f"{prefix}_wn"] += np.outer(x, da_n)
            grads[f"{prefix}_bn"] += da_n
            dr = da_n * c
            dcand = da_n * r
            grads[f"{prefix}_un"] += np.outer(h_prev, dcand)
            dh_prev = dh_prev + dcand @ un.T
            da_r = dr * r * (1.0 - r)
            grads[f"{prefix}_wr"] += np.outer(x, da_r)
            grads[f"{prefix}_ur"] += np.outer(h_prev, da_r)
            grads[f"{prefix}_br"] += da_r
            dh_prev = dh_prev + da_r @ ur.T
            da_z = dz * z * (1.0 - z)
            grads[f"{prefix}_wz"] += np.outer(x, da_z)
            grads[f"{prefix}_uz"] += np.outer(h_prev, da_z)
            grads[f"{prefix}_bz"] += da_z
            dh_prev = dh_prev + da_z @ uz.T
            dproj_dir[t] = da_n @ wn.T + da_r @ wr.T + da_z @ wz.T
            dh = dh_prev
        dproj += dproj_dir if prefix == "fw" else dproj_dir[::-1]
    grads["w_in"] = cache.features.T @ dproj
    return grads


def accumulate_grads(into: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    for k, v in grads.items():
        into[k] += v


# -- optimizer -------------------------------------------------------------------

@dataclass
class OptimState:
    """Adam moments plus global-norm gradient clipping."""

    lr: float = 1e-3
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] | None = None
    v: dict[str, np.ndarray] | None = None


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def optimizer_step(params: ModelParams, grads: dict[str, np.ndarray],
                   opt: OptimState) -> ModelParams:
    """In-place adaptive-moment update; gradients are clipped by global norm
    before entering the moment estimates."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient in {name}; aborting the update")
        if params[name].shape != g.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
    if opt.m is None:
        opt.m = params.zeros_like()
        opt.v = params.zeros_like()
    norm = global_norm(grads)
    scale = 1.0 if norm <= opt.clip_norm or norm == 0.0 else opt.clip_norm / norm
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for name, g in grads.items():
        g = g * scale
        opt.m[name] = opt.beta1 * opt.m[name] + (1.0 - opt.beta1) * g
        opt.v[name] = opt.beta2 * opt.v[name] + (1.0 - opt.beta2) * g * g
        m_hat = opt.m[name] / bc1
        v_hat = opt.v[name] / bc2
        params.tensors[name] -= opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    params.version += 1
    return params


# -- checkpoints --------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams):
    """Binary checkpoint: magic, version, dims, then tensors in declared
    order as little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIII", CHECKPOINT_VERSION, params.d_in, params.d_h,
                             params.n_out))
        for name in tensor_names():
            fh.write(params.tensors[name].astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, d_in, d_h, n_out = struct.unpack("<IIII", fh.read(16))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        shapes = expected_shapes(d_in, d_h, n_out)
        tensors = {}
        for name in tensor_names():
            shape = shapes[name]
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"truncated checkpoint while reading {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ValueError("trailing bytes after the declared tensors")
    return ModelParams(d_in, d_h, n_out, tensors)


__all__ = [
    "ForwardCache",
    "ModelParams",
    "OptimState",
    "accumulate_grads",
    "am_backward",
    "am_forward",
    "expected_shapes",
    "global_norm",
    "load_checkpoint",
    "optimizer_step",
    "save_checkpoint",
    "tensor_names",
]
