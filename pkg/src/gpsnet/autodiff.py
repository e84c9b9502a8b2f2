"""Dense reverse-mode autodiff over float64 numpy arrays.

A :class:`Value` wraps an array and, when any input requires a gradient,
remembers its parents and a closure mapping the output adjoint to one
adjoint per parent. Values built only from constants carry no graph, so
eval-mode forward passes allocate nothing for backward.
"""

from __future__ import annotations

import zlib
from collections import OrderedDict

import numpy as np


class Value:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    # -- introspection --------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Value{tag}(shape={self.shape}, op={self.op})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    # -- operators ------------------------------------------------------
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _make(data, parents, backward_fn, op) -> Value:
    out = Value(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out.op = op
    return out


def _topo(root: Value) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Value) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError("backward() needs a scalar loss")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


def dump_graph(root: Value, path) -> None:
    """Write the op graph as ``child parent`` lines, one node label per id."""
    nodes = _topo(root)
    ids = {id(n): i for i, n in enumerate(nodes)}
    with open(path, "w", encoding="utf-8") as fh:
        for n in nodes:
            fh.write(f"# {ids[id(n)]} {n.op} {list(n.shape)} {n.name or ''}\n")
        for n in nodes:
            for p in n._parents:
                if id(p) in ids:
                    fh.write(f"{ids[id(n)]} {ids[id(p)]}\n")


# -- elementwise -------------------------------------------------------------

def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from None


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)), "div")


def scale(x: Value, c: float) -> Value:
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def relu(x: Value) -> Value:
    out = np.maximum(x.data, 0.0)
    return _make(out, (x,), lambda g: (g * (out > 0),), "relu")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Value) -> Value:
    s = _sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def exp(x: Value) -> Value:
    e = np.exp(x.data)
    return _make(e, (x,), lambda g: (g * e,), "exp")


def log(x: Value) -> Value:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def absolute(x: Value) -> Value:
    s = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * s,), "abs")


def stop_gradient(x: Value) -> Value:
    return Value(x.data)


ELEMENTWISE = {"add": add, "mul": mul, "relu": relu, "sigmoid": sigmoid,
               "exp": exp, "scale": scale}


def elementwise(kind: str, *args) -> Value:
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(*args)


# -- reductions and reshaping ------------------------------------------------

def total(x: Value) -> Value:
    return _make(np.array(x.data.sum()), (x,),
                 lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x: Value) -> Value:
    n = x.data.size
    return _make(np.array(x.data.mean()), (x,),
                 lambda g: (np.full(x.shape, float(g) / n),), "mean")


def sum_axis(x: Value, axis: int, keepdims=False) -> Value:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _make(out, (x,), bw, "sum_axis")


def reshape(x: Value, shape) -> Value:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Value) -> Value:
    return _make(x.data.T, (x,), lambda g: (g.T,), "transpose")


def concat(xs, axis=1) -> Value:
    xs = [as_value(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def slice_cols(x: Value, start: int, stop: int) -> Value:
    def bw(g):
        full = np.zeros(x.shape)
        full[:, start:stop] = g
        return (full,)
    return _make(x.data[:, start:stop], (x,), bw, "slice")


def split_cols(x: Value, sizes) -> list:
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [slice_cols(x, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


# -- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T if a.requires_grad else None,
                            a.data.T @ g if b.requires_grad else None), "matmul")


def affine(x, w, b=None) -> Value:
    """x @ w + b as one node; b broadcasts over rows."""
    x, w = as_value(x), as_value(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"affine shape mismatch: {x.shape} @ {w.shape}")
    out = x.data @ w.data
    if b is None:
        return _make(out, (x, w),
                     lambda g: (g @ w.data.T if x.requires_grad else None,
                                x.data.T @ g if w.requires_grad else None), "affine")
    out += b.data
    return _make(out, (x, w, b),
                 lambda g: (g @ w.data.T if x.requires_grad else None,
                            x.data.T @ g if w.requires_grad else None,
                            g.sum(axis=0) if b.requires_grad else None), "affine")


def softmax_rows(x: Value) -> Value:
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    return _make(s, (x,), lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),),
                 "softmax")


def log_softmax_rows(x: Value) -> Value:
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=1, keepdims=True),), "log_softmax")


# -- index ops ---------------------------------------------------------------

def _segment_reduce_sum(x: np.ndarray, seg: np.ndarray, num_segments: int) -> np.ndarray:
    out = np.zeros((num_segments,) + x.shape[1:])
    if len(seg) == 0:
        return out
    if np.all(seg[1:] >= seg[:-1]):
        order = None
    else:
        order = np.argsort(seg, kind="stable")
        seg, x = seg[order], x[order]
    present, starts = np.unique(seg, return_index=True)
    out[present] = np.add.reduceat(x, starts, axis=0)
    return out


def _check_index(idx, bound, what):
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) and (idx.min() < 0 or idx.max() >= bound):
        raise IndexError(f"{what} index out of range [0, {bound})")
    return idx


def segment_sum(x: Value, seg, num_segments: int) -> Value:
    seg = _check_index(seg, num_segments, "segment")
    if len(seg) != x.shape[0]:
        raise ValueError("segment index must have one entry per row")
    return _make(_segment_reduce_sum(x.data, seg, num_segments), (x,),
                 lambda g: (g[seg],), "segment_sum")


def gather_rows(x: Value, idx) -> Value:
    idx = _check_index(idx, x.shape[0], "gather")
    n = x.shape[0]
    return _make(x.data[idx], (x,), lambda g: (_segment_reduce_sum(g, idx, n),), "gather")


def segment_mean(x: Value, seg, num_segments: int) -> Value:
    counts = np.bincount(np.asarray(seg), minlength=num_segments).astype(np.float64)
    inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    return mul(segment_sum(x, seg, num_segments), inv[:, None])


def segment_max(x: Value, seg, num_segments: int) -> Value:
    """Per-segment max; the gradient goes to the lowest-index argmax row."""
    seg = _check_index(seg, num_segments, "segment")
    if np.any(seg[1:] < seg[:-1]):
        raise ValueError("segment_max needs a sorted segment index")
    present, starts = np.unique(seg, return_index=True)
    if len(present) != num_segments:
        raise ValueError("segment_max got an empty segment")
    mx = np.maximum.reduceat(x.data, starts, axis=0)
    rows = np.arange(x.shape[0])[:, None]
    hit = np.where(x.data == mx[seg], rows, x.shape[0])
    arg = np.minimum.reduceat(hit, starts, axis=0)

    def bw(g):
        full = np.zeros(x.shape)
        cols = np.broadcast_to(np.arange(x.shape[1]), arg.shape)
        full[arg, cols] = g
        return (full,)
    return _make(mx, (x,), bw, "segment_max")


# -- normalization and regularization ---------------------------------------

class BatchNormState:
    __slots__ = ("running_mean", "running_var", "momentum", "eps")

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x: Value, gamma: Value, beta: Value, state: BatchNormState,
              training: bool) -> Value:
    """Per-feature normalization over rows with a learnable affine map."""
    eps = state.eps
    if training:
        n = x.shape[0]
        if n < 2:
            raise ValueError("batchnorm in training mode needs at least 2 rows")
        mu = x.data.mean(axis=0)
        xc = x.data - mu
        var = (xc * xc).mean(axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv_std
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var * n / (n - 1)

        def bw(g):
            dxhat = g * gamma.data
            dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0)
                                - xhat * (dxhat * xhat).sum(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)
    else:
        inv_std = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (x.data - state.running_mean) * inv_std

        def bw(g):
            return g * gamma.data * inv_std, (g * xhat).sum(axis=0), g.sum(axis=0)
    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "batchnorm")


def keep_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    """Inverted-dropout multipliers, each zero with probability ~p.

    Draws 16 random bits per entry instead of a float: the drop rate is
    rounded to a multiple of 2^-16 and the survivors are rescaled by the
    exact keep rate, so the mask stays unbiased.
    """
    thr = int(round(p * 65536))
    if thr >= 65536:
        raise ValueError("dropout rate too close to 1")
    size = int(np.prod(shape))
    bits = np.frombuffer(rng.bytes(2 * size), dtype="<u2").reshape(shape)
    return (bits >= thr) * (65536.0 / (65536 - thr))


def dropout(x: Value, p: float, training: bool, rng: np.random.Generator | None) -> Value:
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not training or p == 0.0:
        return x
    keep = keep_mask(rng, x.shape, p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# -- attention cores ---------------------------------------------------------

def _pad_layout(seg: np.ndarray):
    num = int(seg[-1]) + 1 if len(seg) else 0
    counts = np.bincount(seg, minlength=num)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pos = np.arange(len(seg)) - starts[seg]
    return num, int(counts.max()) if num else 0, pos, counts


def _split_heads(a, heads):
    b, n, w = a.shape
    return a.reshape(b, n, heads, w // heads).transpose(0, 2, 1, 3)


def _merge_heads(a):
    b, h, n, dh = a.shape
    return a.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def segment_attention(q: Value, k: Value, v: Value, seg, heads: int,
                      dropout_p: float = 0.0, training: bool = False,
                      rng: np.random.Generator | None = None) -> Value:
    """Multi-head softmax attention restricted to rows of the same segment.

    ``seg`` must be sorted. Rows are packed into a (graphs, max_nodes)
    layout per head; padded keys get probability exactly 0. Dropout, when
    active, is applied to the probability matrix.
    """
    seg = np.asarray(seg, dtype=np.int64)
    if np.any(seg[1:] < seg[:-1]):
        raise ValueError("segment_attention needs a sorted segment index")
    n, d = q.shape
    if d % heads:
        raise ValueError("heads must divide the feature width")
    dh = d // heads
    scale_ = 1.0 / np.sqrt(dh)
    b, nmax, pos, counts = _pad_layout(seg)
    valid = np.arange(nmax)[None, :] < counts[:, None]           # (b, nmax)
    key_mask = np.where(valid, 0.0, -np.inf)[:, None, :]          # (b, 1, nmax)
    use_drop = training and dropout_p > 0.0

    def pad(a):
        out = np.zeros((b, nmax, a.shape[1]))
        out[seg, pos] = a
        return out

    qp, kp, vp = pad(q.data), pad(k.data), pad(v.data)
    # all heads at once for small blocks, one head at a time for large graphs
    group = heads if b * heads * nmax * nmax <= (1 << 22) else 1
    saved = []
    outp = np.zeros((b, nmax, d))
    for h0 in range(0, heads, group):
        cs = slice(h0 * dh, (h0 + group) * dh)
        qh = _split_heads(qp[:, :, cs], group)
        kh = _split_heads(kp[:, :, cs], group)
        vh = _split_heads(vp[:, :, cs], group)
        s = (qh * scale_) @ kh.transpose(0, 1, 3, 2)
        s += key_mask[:, None]
        s -= s.max(axis=3, keepdims=True)
        p = np.exp(s, out=s)
        p *= 1.0 / p.sum(axis=3, keepdims=True)
        if use_drop:
            keep = keep_mask(rng, p.shape, dropout_p)
            pd = p * keep
        else:
            keep, pd = None, p
        outp[:, :, cs] = _merge_heads(pd @ vh)
        saved.append((cs, qh, kh, vh, p, keep, pd))
    out = outp[seg, pos]

    def bw(g):
        gp = pad(g)
        dq, dk, dv = np.zeros_like(qp), np.zeros_like(kp), np.zeros_like(vp)
        for cs, qh, kh, vh, p, keep, pd in saved:
            go = _split_heads(gp[:, :, cs], qh.shape[1])
            dv[:, :, cs] = _merge_heads(pd.transpose(0, 1, 3, 2) @ go)
            dp = go @ vh.transpose(0, 1, 3, 2)
            if keep is not None:
                dp *= keep
            ds = p * (dp - (dp * p).sum(axis=3, keepdims=True)) * scale_
            dq[:, :, cs] = _merge_heads(ds @ kh)
            dk[:, :, cs] = _merge_heads(ds.transpose(0, 1, 3, 2) @ qh)
        return dq[seg, pos], dk[seg, pos], dv[seg, pos]
    return _make(out, (q, k, v), bw, "segment_attention")


def linear_attention(phi_q: Value, phi_k: Value, v: Value, seg, min_denominator=1e-30) -> Value:
    """Kernelized attention D^-1 phi(Q) (phi(K)^T V), segment by segment.

    Cost is O(N m d) for N rows, m features and value width d; no N x N
    array is formed.
    """
    seg = np.asarray(seg, dtype=np.int64)
    num = int(seg.max()) + 1 if len(seg) else 0
    fq, fk, vv = phi_q.data, phi_k.data, v.data
    if num == 1:
        kv = (fk.T @ vv)[None]
        z = fk.sum(axis=0)[None]
    else:
        kv = _segment_reduce_sum(np.einsum("nm,nd->nmd", fk, vv), seg, num)
        z = _segment_reduce_sum(fk, seg, num)
    if num == 1:
        numer = fq @ kv[0]
        den = fq @ z[0]
    else:
        numer = np.einsum("nm,nmd->nd", fq, kv[seg])
        den = np.einsum("nm,nm->n", fq, z[seg])
    if np.any(den < min_denominator):
        raise FloatingPointError(
            "linear attention denominator underflow; use more random features")
    out = numer / den[:, None]

    def bw(g):
        gn = g / den[:, None]
        gd = -(g * out).sum(axis=1) / den
        if num == 1:
            dfq = gn @ kv[0].T + gd[:, None] * z[0]
            gkv = (fq.T @ gn)[None]
            gz = (gd @ fq)[None]
            dfk = vv @ gkv[0].T + gz[0]
            dv = fk @ gkv[0]
        else:
            dfq = np.einsum("nd,nmd->nm", gn, kv[seg]) + gd[:, None] * z[seg]
            gkv = _segment_reduce_sum(np.einsum("nm,nd->nmd", fq, gn), seg, num)
            gz = _segment_reduce_sum(gd[:, None] * fq, seg, num)
            dfk = np.einsum("nd,nmd->nm", vv, gkv[seg]) + gz[seg]
            dv = np.einsum("nm,nmd->nd", fk, gkv[seg])
        return dfq, dfk, dv
    return _make(out, (phi_q, phi_k, v), bw, "linear_attention")


# -- randomness --------------------------------------------------------------

def rng_stream(seed: int, *names) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by a seed and a name path."""
    key = tuple(zlib.crc32(str(n).encode()) for n in names)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


# -- parameters --------------------------------------------------------------

class ParamStore:
    """Named learnable tensors, optimizer moments and batch-norm buffers."""

    def __init__(self):
        self.params: "OrderedDict[str, Value]" = OrderedDict()
        self.moments: dict = {}
        self.bn: "OrderedDict[str, BatchNormState]" = OrderedDict()
        self.step = 0

    def add(self, name: str, data) -> Value:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        v = Value(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = v
        return v

    def glorot(self, name, fan_in, fan_out, rng) -> Value:
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-lim, lim, size=(fan_in, fan_out)))

    def zeros(self, name, *shape) -> Value:
        return self.add(name, np.zeros(shape))

    def ones(self, name, *shape) -> Value:
        return self.add(name, np.ones(shape))

    def batchnorm_state(self, name, dim, momentum=0.1, eps=1e-5) -> BatchNormState:
        if name in self.bn:
            raise KeyError(f"duplicate batch-norm name {name!r}")
        st = BatchNormState(dim, momentum, eps)
        self.bn[name] = st
        return st

    def __getitem__(self, name) -> Value:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def num_params(self) -> int:
        return int(sum(v.data.size for v in self.params.values()))

    def zero_grads(self) -> None:
        for v in self.params.values():
            v.grad = np.zeros_like(v.data)

    def snapshot(self) -> dict:
        """Deep copy of parameter values and batch-norm buffers."""
        return {"params": {k: v.data.copy() for k, v in self.params.items()},
                "bn": {k: (s.running_mean.copy(), s.running_var.copy())
                       for k, s in self.bn.items()}}

    def restore(self, snap: dict) -> None:
        for k, arr in snap["params"].items():
            self.params[k].data = arr.copy()
        for k, (m, v) in snap["bn"].items():
            self.bn[k].running_mean = m.copy()
            self.bn[k].running_var = v.copy()


# -- gradient checking -------------------------------------------------------

def grad_check(f, params, coords_per_tensor: int = 64, rng=None,
               floor: float = 1e-6) -> float:
    """Worst relative error between backprop and central differences.

    ``f`` must rebuild the scalar loss from scratch on every call and be
    deterministic. ``params`` is a ParamStore, a dict of Values, or a list
    of Values. Tensors with more than ``coords_per_tensor`` entries are
    checked at that many sampled coordinates. Derivatives come from a
    five-point stencil with step 1e-4 (scaled by |x| above one). The relative error uses
    ``max(|analytic|, |numeric|, floor)`` as denominator.
    """
    if isinstance(params, ParamStore):
        items = list(params.params.items())
    elif isinstance(params, dict):
        items = list(params.items())
    else:
        items = [(str(i), p) for i, p in enumerate(params)]
    rng = rng or np.random.default_rng(0)
    for _, p in items:
        p.grad = np.zeros_like(p.data)
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite")
    backward(loss)
    worst = 0.0
    for _, p in items:
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= coords_per_tensor else rng.choice(n, coords_per_tensor, replace=False)
        analytic = p.grad.reshape(-1)
        for i in idx:
            orig = flat[i]
            # five-point stencil: truncation O(h^4) lets h stay large enough
            # that roundoff sits near 1e-12 for unit-scale losses
            h = 1e-4 * max(1.0, abs(orig))
            vals = []
            for step in (2, 1, -1, -2):
                flat[i] = orig + step * h
                vals.append(float(f().data))
            flat[i] = orig
            if not np.all(np.isfinite(vals)):
                raise FloatingPointError("non-finite loss during finite differences")
            num = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
            err = abs(num - analytic[i]) / max(abs(num), abs(analytic[i]), floor)
            worst = max(worst, err)
    return worst
