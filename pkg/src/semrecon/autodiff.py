"""Reverse-mode gradient engine over a fixed primitive set, plus Adam.

The computation graph this package needs is closed and known (feature-grid
gathers, small MLPs, ray compositing, scalar losses), so the engine records a
flat tape of executed ops rather than compiling a general graph.  Creation
order is a topological order, so backward is a single reverse sweep.

Ops accept `Var` (tracked), `Param` (tracked leaf), or plain ndarrays/scalars
(constants).  With no active tape, ops still compute forward values, which
gives planning/evaluation the same numerics as training without recording
overhead.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError, ContractViolation, ShapeError

_TAPE = None  # module-level active tape; single-writer by design


class Var:
    """An ndarray wrapper tracked by the tape."""

    __slots__ = ("data", "grad", "_bwd", "_parents")

    def __init__(self, data):
        self.data = np.asarray(data)
        self.grad = None
        self._bwd = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Var(shape={self.data.shape}, dtype={self.data.dtype})"

    # light operator sugar; all routed through the recorded primitives
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class Param(Var):
    """Named leaf parameter with a persistent gradient accumulator and Adam state."""

    __slots__ = ("name", "lr_mult", "m", "v")

    def __init__(self, name, data, lr_mult=1.0):
        super().__init__(data)
        self.name = name
        self.lr_mult = float(lr_mult)
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)


class Tape:
    """Ordered record of executed primitives for one forward pass."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        global _TAPE
        if _TAPE is not None:
            raise ContractViolation("a tape is already active")
        _TAPE = self
        return self

    def __exit__(self, *exc):
        global _TAPE
        _TAPE = None
        return False

    def __len__(self):
        return len(self._nodes)

    def reset(self):
        for node in self._nodes:
            node.grad = None
        self._nodes.clear()

    def backward(self, loss):
        """Accumulate d(loss)/d(param) into every reachable Param, then clear.

        Gradients add (+=) into `Param.grad`; intermediate Var gradients are
        transient.  The reverse sweep over creation order touches each
        recorded node exactly once.
        """
        if not isinstance(loss, Var):
            raise ContractViolation("backward target must be a tracked Var")
        if loss.data.size != 1:
            raise ContractViolation(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            if node.grad is None or node._bwd is None:
                continue
            node._bwd(node.grad)
        self.reset()


def _data(x):
    return x.data if isinstance(x, Var) else np.asarray(x)


def _record(out_data, parents, bwd):
    out = Var(out_data)
    if _TAPE is not None and any(isinstance(p, Var) for p in parents):
        out._parents = parents
        out._bwd = bwd
        _TAPE._nodes.append(out)
    return out


def _accum(target, g):
    """Add gradient g into target if it is tracked."""
    if not isinstance(target, Var):
        return
    if g.dtype != target.data.dtype:
        g = g.astype(target.data.dtype)
    if g.shape != target.data.shape:
        g = np.broadcast_to(g, target.data.shape) if g.size == 1 else g.reshape(target.data.shape)
    if isinstance(target, Param):
        target.grad += g  # persistent accumulator, never aliased
    elif target.grad is None:
        target.grad = g
    else:
        target.grad = target.grad + g


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a, b):
    ad, bd = _data(a), _data(b)
    out = ad + bd

    def bwd(g):
        _accum(a, _unbroadcast(g, ad.shape))
        _accum(b, _unbroadcast(g, bd.shape))

    return _record(out, (a, b), bwd)


def sub(a, b):
    ad, bd = _data(a), _data(b)
    out = ad - bd

    def bwd(g):
        _accum(a, _unbroadcast(g, ad.shape))
        _accum(b, _unbroadcast(-g, bd.shape))

    return _record(out, (a, b), bwd)


def mul(a, b):
    ad, bd = _data(a), _data(b)
    out = ad * bd

    def bwd(g):
        _accum(a, _unbroadcast(g * bd, ad.shape))
        _accum(b, _unbroadcast(g * ad, bd.shape))

    return _record(out, (a, b), bwd)


def div(a, b):
    ad, bd = _data(a), _data(b)
    out = ad / bd

    def bwd(g):
        _accum(a, _unbroadcast(g / bd, ad.shape))
        _accum(b, _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _record(out, (a, b), bwd)


def concat(parts, axis=1):
    datas = [_data(p) for p in parts]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return _record(out, tuple(parts), bwd)


def reshape(a, shape):
    ad = _data(a)
    out = ad.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(ad.shape))

    return _record(out, (a,), bwd)


def sum_axis(a, axis):
    ad = _data(a)
    out = ad.sum(axis=axis)

    def bwd(g):
        _accum(a, np.broadcast_to(np.expand_dims(g, axis), ad.shape))

    return _record(out, (a,), bwd)


def sum_all(a):
    """Scalar sum; accumulates in float64 regardless of operand dtype."""
    ad = _data(a)
    out = np.asarray(ad.sum(dtype=np.float64))

    def bwd(g):
        _accum(a, np.broadcast_to(g, ad.shape))

    return _record(out, (a,), bwd)


def mean_all(a):
    """Scalar mean; accumulates in float64."""
    ad = _data(a)
    n = ad.size
    out = np.asarray(ad.sum(dtype=np.float64) / n)

    def bwd(g):
        _accum(a, np.broadcast_to(g / n, ad.shape))

    return _record(out, (a,), bwd)


def abs_(a):
    ad = _data(a)
    out = np.abs(ad)

    def bwd(g):
        _accum(a, g * np.sign(ad))

    return _record(out, (a,), bwd)


def sqrt_shift(a, eps=0.0):
    """sqrt(a + eps); eps keeps the gradient finite at a == 0."""
    ad = _data(a)
    out = np.sqrt(ad + eps)

    def bwd(g):
        _accum(a, g * (0.5 / np.maximum(out, 1e-30)))

    return _record(out, (a,), bwd)


def log_clip(a, floor):
    """log(max(a, floor)); zero gradient where the floor is active."""
    ad = _data(a)
    clipped = np.maximum(ad, floor)
    out = np.log(clipped)

    def bwd(g):
        _accum(a, g * np.where(ad > floor, 1.0 / clipped, 0.0))

    return _record(out, (a,), bwd)


def maximum_const(a, c):
    ad = _data(a)
    out = np.maximum(ad, c)

    def bwd(g):
        _accum(a, g * (ad > c))

    return _record(out, (a,), bwd)


def take_rows(a, idx):
    """Pick one entry per row: out[i] = a[i, idx[i]]."""
    ad = _data(a)
    rows = np.arange(ad.shape[0])
    out = ad[rows, idx]

    def bwd(g):
        ga = np.zeros_like(ad)
        ga[rows, idx] = g
        _accum(a, ga)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# neural-net primitives


def relu(a):
    ad = _data(a)
    out = np.maximum(ad, 0)

    def bwd(g):
        _accum(a, g * (ad > 0))

    return _record(out, (a,), bwd)


def sigmoid(a):
    ad = _data(a)
    # piecewise-stable logistic
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    out[~pos] = ez / (1.0 + ez)

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return _record(out, (a,), bwd)


def softmax(a):
    """Row-wise softmax over the last axis."""
    ad = _data(a)
    shifted = ad - ad.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accum(a, out * (g - dot))

    return _record(out, (a,), bwd)


_ACTIVATIONS = ("identity", "relu", "sigmoid", "softmax")


def linear(x, weight, bias, activation="identity", name="linear"):
    """Affine layer with a fused elementwise activation (softmax per row)."""
    xd, wd, bd = _data(x), _data(weight), _data(bias)
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"layer '{name}': unknown activation '{activation}'")
    if xd.ndim != 2 or wd.ndim != 2:
        raise ShapeError(f"layer '{name}': expected 2-D input and weights")
    if xd.shape[1] != wd.shape[0]:
        raise ShapeError(
            f"layer '{name}': input width {xd.shape[1]} does not match "
            f"weight rows {wd.shape[0]}"
        )
    if bd.shape != (wd.shape[1],):
        raise ShapeError(f"layer '{name}': bias shape {bd.shape} != ({wd.shape[1]},)")

    z = xd @ wd + bd
    if activation == "identity":
        out = z
    elif activation == "relu":
        out = np.maximum(z, 0)
    elif activation == "sigmoid":
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
    else:  # softmax
        e = np.exp(z - z.max(axis=1, keepdims=True))
        out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        if activation == "identity":
            gz = g
        elif activation == "relu":
            gz = g * (z > 0)
        elif activation == "sigmoid":
            gz = g * out * (1.0 - out)
        else:
            gz = out * (g - (g * out).sum(axis=1, keepdims=True))
        _accum(weight, xd.T @ gz)
        _accum(bias, gz.sum(axis=0))
        _accum(x, gz @ wd.T)

    return _record(out, (x, weight, bias), bwd)


def trilinear_gather(nodes, idx8, w8):
    """Blend 8 grid-node feature rows per query point.

    nodes: (M, T) node features (tracked); idx8: (N, 8) int node indices;
    w8: (N, 8) blend weights.  idx8/w8 are constants of the op.
    """
    nd = _data(nodes)
    n_nodes = nd.shape[0]
    out = np.zeros((idx8.shape[0], nd.shape[1]), dtype=nd.dtype)
    buf = np.empty_like(out)
    for k in range(8):
        np.take(nd, idx8[:, k], axis=0, out=buf)
        buf *= w8[:, k : k + 1]
        out += buf

    def bwd(g):
        flat_idx = idx8.ravel()
        gn = np.empty_like(nd, dtype=np.float64)
        for t in range(nd.shape[1]):
            contrib = (w8 * g[:, t : t + 1]).ravel()
            gn[:, t] = np.bincount(flat_idx, weights=contrib, minlength=n_nodes)
        _accum(nodes, gn.astype(nd.dtype))

    return _record(out, (nodes,), bwd)


def compositing(occ):
    """Per-sample compositing weights and transmittances along rays.

    occ: (B, S) per-sample occupancy in [0, 1].  Returns (w, T) with
    T[:, i] = prod_{j<i}(1 - occ[:, j]) and w = occ * T.
    """
    od = _data(occ)
    if od.ndim != 2:
        raise ShapeError(f"compositing expects (rays, samples), got {od.shape}")
    one_minus = 1.0 - od
    trans = np.cumprod(
        np.concatenate([np.ones_like(od[:, :1]), one_minus[:, :-1]], axis=1), axis=1
    )
    w = od * trans

    def _occ_grad_from(s, extra=None):
        # d/d o_k of sum_i s_i-weighted products: each product carries the
        # factor (1 - o_k) for k < i, so the chain term is -(downstream)/(1-o_k).
        tail = np.flip(np.cumsum(np.flip(s, axis=1), axis=1), axis=1) - s
        denom = one_minus
        safe = np.where(np.abs(denom) > 1e-12, denom, 1.0)
        go = -np.where(np.abs(denom) > 1e-12, tail / safe, 0.0)
        if extra is not None:
            go = go + extra
        return go

    def bwd_w(g):
        _accum(occ, _occ_grad_from(g * w, extra=g * trans))

    def bwd_t(g):
        _accum(occ, _occ_grad_from(g * trans))

    w_var = _record(w, (occ,), bwd_w)
    t_var = _record(trans, (occ,), bwd_t)
    return w_var, t_var


def weighted_sum(w, vals):
    """Composite per-sample values into per-ray outputs: (B,S),(B,S,C)->(B,C)."""
    wd, vd = _data(w), _data(vals)
    out = np.einsum("bs,bsc->bc", wd, vd)

    def bwd(g):
        _accum(w, np.einsum("bc,bsc->bs", g, vd))
        _accum(vals, wd[:, :, None] * g[:, None, :])

    return _record(out, (w, vals), bwd)


# ---------------------------------------------------------------------------
# parameter store and optimizer


class ParamStore:
    """Named parameters with gradient accumulators and Adam moment buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Param] = {}
        self.step_count = 0

    def register(self, name, array, lr_mult=1.0):
        if name in self.params:
            raise ConfigError(f"parameter '{name}' already registered")
        p = Param(name, np.asarray(array, dtype=self.dtype), lr_mult=lr_mult)
        self.params[name] = p
        return p

    def __getitem__(self, name):
        return self.params[name]

    def names(self):
        return sorted(self.params)

    def n_parameters(self):
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad[...] = 0

    def adam_step(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        """Standard Adam with bias correction; gradients are left untouched."""
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - beta1**t
        inv_sqrt_bc2 = 1.0 / np.sqrt(1.0 - beta2**t)
        for name in self.names():
            p = self.params[name]
            g = p.grad
            p.m *= beta1
            p.m += (1.0 - beta1) * g
            p.v *= beta2
            gg = g * g
            gg *= 1.0 - beta2
            p.v += gg
            # update = lr_eff * (m/bc1) / (sqrt(v/bc2) + eps), in-place temps
            denom = np.sqrt(p.v)
            denom *= inv_sqrt_bc2
            denom += eps
            np.divide(p.m, denom, out=denom)
            denom *= lr * p.lr_mult / bc1
            p.data -= denom

    # -- checkpointing ------------------------------------------------------

    def state_arrays(self):
        out = {}
        for name in self.names():
            p = self.params[name]
            out[name] = p.data
            out[f"opt.m:{name}"] = p.m
            out[f"opt.v:{name}"] = p.v
        out["opt.step"] = np.asarray([self.step_count], dtype=np.int64)
        return out

    def load_state_arrays(self, arrays):
        for name in self.names():
            p = self.params[name]
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing parameter '{name}'")
            val = arrays[name]
            if val.shape != p.data.shape:
                raise ShapeError(
                    f"checkpoint shape {val.shape} != {p.data.shape} for '{name}'"
                )
            p.data[...] = val
            if f"opt.m:{name}" in arrays:
                p.m[...] = arrays[f"opt.m:{name}"]
            if f"opt.v:{name}" in arrays:
                p.v[...] = arrays[f"opt.v:{name}"]
        if "opt.step" in arrays:
            self.step_count = int(arrays["opt.step"][0])


CHECKPOINT_VERSION = 1
_DTYPE_CODES = {0: np.float32, 1: np.float64, 2: np.int64, 3: np.int32}
_DTYPE_TO_CODE = {np.dtype(v): k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(path, arrays):
    """Binary dump of named arrays: version byte, then entries with shape headers."""
    with open(path, "wb") as f:
        f.write(struct.pack("<B", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            code = _DTYPE_TO_CODE.get(arr.dtype)
            if code is None:
                raise ConfigError(f"unsupported checkpoint dtype {arr.dtype} for '{name}'")
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    off = 0
    (version,) = struct.unpack_from("<B", raw, off)
    off += 1
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        dtype = np.dtype(_DTYPE_CODES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        out[name] = np.frombuffer(raw[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
    return out
