"""The GPS network: input encoders, hybrid MPNN + global-attention layers, heads."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Value
from .encodings import BatchEncodings
from .graph import GraphBatch

MPNN_KINDS = ("none", "gine", "gatedgcn", "gatedgcn+peg")
ATTN_KINDS = ("none", "transformer", "performer")
PE_KINDS = ("none", "lappe", "rwse", "signnet_mlp", "signnet_deepsets", "peg_lapeig")
PE_ENCODERS = ("linear", "deepset")
POOLINGS = ("sum", "mean", "max")
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    layers: int = 10
    mpnn: str = "gine"
    attn: str = "transformer"
    heads: int = 4
    pe: str = "rwse"
    lap_k: int = 8
    rwse_m: int = 20
    pe_dim: int = 28
    pe_encoder: str = "linear"
    signnet_hidden: int = 16
    dropout: float = 0.0
    attn_dropout: float = 0.5
    pooling: str = "sum"
    task: str = "graph"           # graph | node
    out_dim: int = 1
    node_types: int = 28          # 0 means real-valued node features
    node_in_dim: int = 0
    edge_types: int = 3           # 0 means real-valued edge features
    edge_in_dim: int = 0
    m_feat: int = 64
    gine_edge_linear: bool = False
    seed: int = 0

    def validate(self) -> None:
        for key, allowed in (("mpnn", MPNN_KINDS), ("attn", ATTN_KINDS), ("pe", PE_KINDS),
                             ("pe_encoder", PE_ENCODERS), ("pooling", POOLINGS),
                             ("task", ("graph", "node"))):
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key}: {getattr(self, key)!r} not in {allowed}")
        if self.mpnn == "none" and self.attn == "none" and self.layers > 0:
            raise ConfigError("mpnn and attn cannot both be none")
        if self.attn != "none" and self.hidden_dim % self.heads:
            raise ConfigError("heads must divide hidden_dim")
        if self.pe in ("lappe", "rwse", "signnet_mlp", "signnet_deepsets"):
            if not 0 < self.pe_dim < self.hidden_dim:
                raise ConfigError("pe_dim must lie in (0, hidden_dim)")
        if self.pe_encoder == "deepset" and self.pe != "lappe":
            raise ConfigError("the deepset PE encoder reads eigenpairs; use it with pe=lappe")
        if self.node_types <= 0 and self.node_in_dim <= 0:
            raise ConfigError("set node_types or node_in_dim")

    @property
    def uses_lap(self) -> bool:
        return self.pe in ("lappe", "signnet_mlp", "signnet_deepsets", "peg_lapeig") \
            or self.mpnn == "gatedgcn+peg"

    @property
    def uses_peg(self) -> bool:
        return self.pe == "peg_lapeig" or self.mpnn == "gatedgcn+peg"

    @property
    def node_pe_dim(self) -> int:
        return self.pe_dim if self.pe in ("lappe", "rwse", "signnet_mlp", "signnet_deepsets") else 0

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


# -- building blocks -----------------------------------------------------------

def linear(x: Value, w: Value, b: Value | None = None) -> Value:
    return ad.affine(x, w, b)


def _add_linear(store, name, n_in, n_out, rng, bias=True):
    store.glorot(name + ".w", n_in, n_out, rng)
    if bias:
        store.zeros(name + ".b", n_out)


def _lin(store, name, x, bias=True):
    return linear(x, store[name + ".w"], store[name + ".b"] if bias else None)


def gine_layer(x, e, src, dst, store, prefix, gate=None, edge_linear=False):
    """GINE update; edge features pass through unchanged.

    Node u aggregates relu(x_v + W_e e_vu) over the arcs (u, v) of its CSR
    row, optionally scaled per arc by ``gate``.
    """
    n = x.shape[0]
    ee = _lin(store, prefix + "edge", e, bias=False) if edge_linear else e
    msg = ad.relu(ad.gather_rows(x, dst) + ee)
    if gate is not None:
        msg = msg * gate
    agg = ad.segment_sum(msg, src, n)
    h = x * (1.0 + store[prefix + "eps"]) + agg
    h = _lin(store, prefix + "mlp1", h)
    h = _lin(store, prefix + "mlp2", ad.relu(h))
    return h, e


def gatedgcn_layer(x, e, src, dst, store, prefix, gate=None, eps_stab=1e-6):
    """Edge-gated graph convolution; returns (node update, pre-activation edges)."""
    n = x.shape[0]
    ax1 = _lin(store, prefix + "A1", x)
    ax2 = _lin(store, prefix + "A2", x)
    ae3 = _lin(store, prefix + "A3", e)
    e_hat = ad.gather_rows(ax1, src) + ad.gather_rows(ax2, dst) + ae3
    eta = ad.sigmoid(e_hat)
    bx2 = ad.gather_rows(_lin(store, prefix + "B2", x), dst)
    msg = eta * bx2
    if gate is not None:
        msg = msg * gate
    num = ad.segment_sum(msg, src, n)
    den = ad.segment_sum(eta, src, n) + eps_stab
    return _lin(store, prefix + "B1", x) + num / den, e_hat


def peg_gate(rel_dist, store, prefix) -> Value:
    """Per-arc multiplier sigmoid(w * dist + b) as an (E, 1) column."""
    d = Value(np.asarray(rel_dist, dtype=np.float64).reshape(-1, 1))
    return ad.sigmoid(d * store[prefix + "peg_w"] + store[prefix + "peg_b"])


def full_attention(x, store, prefix, heads, seg, dropout_p=0.0, training=False, rng=None):
    q, k, v = ad.split_cols(_lin(store, prefix + "qkv", x), [x.shape[1]] * 3)
    o = ad.segment_attention(q, k, v, seg, heads, dropout_p, training, rng)
    return _lin(store, prefix + "o", o)


def positive_features(x: Value, w: np.ndarray, per_row: bool) -> Value:
    """phi(x) = m^-1/2 exp(W x - |x|^2/2 - c) with a stop-gradient stabilizer c.

    ``c`` is the row-wise max for queries and the global max for keys; both
    cancel exactly in the normalized attention output.
    """
    m = w.shape[0]
    proj = ad.matmul(x, Value(w.T))
    half_sq = ad.scale(ad.sum_axis(x * x, axis=1, keepdims=True), 0.5)
    c = proj.data.max(axis=1, keepdims=True) if per_row else proj.data.max()
    return ad.scale(ad.exp(proj - half_sq - Value(c)), m ** -0.5)


def performer_attention(x, store, prefix, heads, features, seg):
    """FAVOR+-style linear attention with fixed Gaussian random features.

    ``features`` is an (m, d/heads) matrix shared by all heads.
    """
    d = x.shape[1]
    dh = d // heads
    q, k, v = ad.split_cols(_lin(store, prefix + "qkv", x), [d] * 3)
    scale = dh ** -0.25
    outs = []
    for h in range(heads):
        qh = ad.scale(ad.slice_cols(q, h * dh, (h + 1) * dh), scale)
        kh = ad.scale(ad.slice_cols(k, h * dh, (h + 1) * dh), scale)
        vh = ad.slice_cols(v, h * dh, (h + 1) * dh)
        outs.append(ad.linear_attention(positive_features(qh, features, True),
                                        positive_features(kh, features, False), vh, seg))
    o = outs[0] if heads == 1 else ad.concat(outs, axis=1)
    return _lin(store, prefix + "o", o)


def signnet_encode(eigvecs, eigvals, store, prefix, variant="deepsets"):
    """Sign-invariant eigenvector encoder rho(sum or concat of phi(v)+phi(-v)).

    phi sees [|v|, lambda] and [-|v|, lambda]; this is the same sum as
    phi([v, lambda]) + phi([-v, lambda]) and makes flipping any column
    leave every intermediate array bit-identical.
    """
    vec = eigvecs.data if isinstance(eigvecs, Value) else np.asarray(eigvecs)
    lam = eigvals.data if isinstance(eigvals, Value) else np.asarray(eigvals)
    n, k = vec.shape
    if lam.ndim == 1:
        lam = np.broadcast_to(lam, (n, k))
    a = np.abs(vec).reshape(-1, 1)
    l = lam.reshape(-1, 1)
    vin = eigvecs if isinstance(eigvecs, Value) and eigvecs.requires_grad else None

    def phi(sign):
        if vin is not None:
            s = Value(np.sign(vec).reshape(-1, 1) * sign)
            col = ad.reshape(vin, (-1, 1)) * s
        else:
            col = Value(sign * a)
        inp = ad.concat([col, Value(l)], axis=1)
        h = ad.relu(_lin(store, prefix + "phi1", inp))
        return _lin(store, prefix + "phi2", h)

    z = phi(1.0) + phi(-1.0)                       # (n*k, hs)
    hs = z.shape[1]
    if variant == "mlp":
        pooled = ad.reshape(z, (n, k * hs))
    elif variant == "deepsets":
        pooled = ad.sum_axis(ad.reshape(z, (n, k, hs)), axis=1)
    else:
        raise ConfigError(f"unknown SignNet variant {variant!r}")
    h = ad.relu(_lin(store, prefix + "rho1", pooled))
    return _lin(store, prefix + "rho2", h)


def pe_encoder(pe_raw, store, prefix, kind="linear", eigvals=None):
    """Linear map of the raw PE vector, or a DeepSet over [lambda_i, v_i(u)] pairs."""
    x = pe_raw if isinstance(pe_raw, Value) else Value(pe_raw)
    if kind == "linear":
        return _lin(store, prefix + "lin", x)
    if kind == "deepset":
        n, k = x.shape
        lam = np.broadcast_to(np.asarray(eigvals), (n, k)).reshape(-1, 1)
        pairs = ad.concat([Value(lam), ad.reshape(x, (-1, 1))], axis=1)
        h = ad.relu(_lin(store, prefix + "ds1", pairs))
        h = _lin(store, prefix + "ds2", h)
        summed = ad.sum_axis(ad.reshape(h, (n, k, h.shape[1])), axis=1)
        return _lin(store, prefix + "out", summed)
    raise ConfigError(f"unknown PE encoder {kind!r}")


def pool_graph(x, seg, num_graphs, mode="sum"):
    if mode == "sum":
        return ad.segment_sum(x, seg, num_graphs)
    if mode == "mean":
        return ad.segment_mean(x, seg, num_graphs)
    if mode == "max":
        return ad.segment_max(x, seg, num_graphs)
    raise ConfigError(f"unknown pooling {mode!r}")


# -- the network ---------------------------------------------------------------

class GPSModel:
    """Parameters and forward pass of an L-layer GPS network."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.store = ParamStore()
        self.features: dict[str, np.ndarray] = {}
        self._build(ad.rng_stream(cfg.seed, "init"))

    # -- construction ---------------------------------------------------
    def _build(self, rng):
        c, s = self.cfg, self.store
        d = c.hidden_dim
        node_w = d - c.node_pe_dim
        if c.node_types > 0:
            s.add("node_enc.emb", rng.normal(0.0, 1.0, (c.node_types, node_w)))
        else:
            _add_linear(s, "node_enc.lin", c.node_in_dim, node_w, rng)
        if c.edge_types > 0:
            s.add("edge_enc.emb", rng.normal(0.0, 1.0, (c.edge_types, d)))
        else:
            _add_linear(s, "edge_enc.lin", c.edge_in_dim, d, rng)
        if c.pe == "rwse":
            _add_linear(s, "pe.lin", c.rwse_m, c.pe_dim, rng)
        elif c.pe == "lappe" and c.pe_encoder == "linear":
            _add_linear(s, "pe.lin", c.lap_k, c.pe_dim, rng)
        elif c.pe == "lappe":
            _add_linear(s, "pe.ds1", 2, c.pe_dim, rng)
            _add_linear(s, "pe.ds2", c.pe_dim, c.pe_dim, rng)
            _add_linear(s, "pe.out", c.pe_dim, c.pe_dim, rng)
        elif c.pe.startswith("signnet"):
            hs = c.signnet_hidden
            _add_linear(s, "pe.phi1", 2, hs, rng)
            _add_linear(s, "pe.phi2", hs, hs, rng)
            rho_in = c.lap_k * hs if c.pe == "signnet_mlp" else hs
            _add_linear(s, "pe.rho1", rho_in, c.pe_dim, rng)
            _add_linear(s, "pe.rho2", c.pe_dim, c.pe_dim, rng)
        for i in range(c.layers):
            p = f"layers.{i}."
            if c.mpnn == "gine":
                s.zeros(p + "mpnn.eps", 1)
                if c.gine_edge_linear:
                    _add_linear(s, p + "mpnn.edge", d, d, rng, bias=False)
                _add_linear(s, p + "mpnn.mlp1", d, d, rng)
                _add_linear(s, p + "mpnn.mlp2", d, d, rng)
            elif c.mpnn.startswith("gatedgcn"):
                for nm in ("A1", "A2", "A3", "B1", "B2"):
                    _add_linear(s, p + "mpnn." + nm, d, d, rng)
                s.ones(p + "bn_edge.gamma", d)
                s.zeros(p + "bn_edge.beta", d)
                s.batchnorm_state(p + "bn_edge", d)
            if c.uses_peg and c.mpnn != "none":
                s.zeros(p + "mpnn.peg_w", 1)
                s.add(p + "mpnn.peg_b", np.array([2.0]))
            if c.mpnn != "none":
                s.ones(p + "bn_local.gamma", d)
                s.zeros(p + "bn_local.beta", d)
                s.batchnorm_state(p + "bn_local", d)
            if c.attn != "none":
                _add_linear(s, p + "attn.qkv", d, 3 * d, rng)
                _add_linear(s, p + "attn.o", d, d, rng)
                s.ones(p + "bn_attn.gamma", d)
                s.zeros(p + "bn_attn.beta", d)
                s.batchnorm_state(p + "bn_attn", d)
                if c.attn == "performer":
                    self.features[p + "attn.features"] = rng.normal(
                        size=(c.m_feat, d // c.heads))
            _add_linear(s, p + "ff1", d, 2 * d, rng)
            _add_linear(s, p + "ff2", 2 * d, d, rng)
            s.ones(p + "bn_ff.gamma", d)
            s.zeros(p + "bn_ff.beta", d)
            s.batchnorm_state(p + "bn_ff", d)
        if c.task == "graph":
            _add_linear(s, "head.l1", d, d, rng)
            _add_linear(s, "head.l2", d, c.out_dim, rng)
        else:
            _add_linear(s, "head.l1", d, c.out_dim, rng)

    def redraw_features(self, rng) -> None:
        for k, w in self.features.items():
            self.features[k] = rng.normal(size=w.shape)

    def num_params(self) -> int:
        return self.store.num_params()

    # -- forward --------------------------------------------------------
    def encode_inputs(self, batch: GraphBatch, enc: BatchEncodings | None,
                      training=False, rng=None):
        c, s = self.cfg, self.store
        if c.node_types > 0:
            nf = np.asarray(batch.node_feat).reshape(-1)
            x = ad.gather_rows(s["node_enc.emb"], nf)
        else:
            x = _lin(s, "node_enc.lin", Value(batch.node_feat.reshape(batch.num_nodes, -1)))
        if c.edge_types > 0:
            ef = (np.zeros(batch.num_arcs, dtype=np.int64) if batch.edge_feat is None
                  else np.asarray(batch.edge_feat).reshape(-1))
            e = ad.gather_rows(s["edge_enc.emb"], ef)
        else:
            e = _lin(s, "edge_enc.lin", Value(batch.edge_feat.reshape(batch.num_arcs, -1)))
        if c.pe == "none" or c.pe == "peg_lapeig":
            return x, e
        if enc is None:
            raise ConfigError(f"pe={c.pe} needs precomputed encodings")
        if c.pe == "rwse":
            if enc.rwse is None:
                raise ConfigError("pe=rwse needs RWSE encodings")
            pe = pe_encoder(enc.rwse, s, "pe.", "linear")
        else:
            if enc.lap_eigvecs is None:
                raise ConfigError(f"pe={c.pe} needs LapPE encodings")
            vecs = enc.lap_eigvecs
            if training and rng is not None:
                flips = rng.choice([-1.0, 1.0], size=(batch.num_graphs, vecs.shape[1]))
                vecs = vecs * flips[batch.segment]
            if c.pe == "lappe":
                pe = pe_encoder(vecs, s, "pe.", c.pe_encoder, enc.lap_eigvals)
            else:
                variant = "mlp" if c.pe == "signnet_mlp" else "deepsets"
                pe = signnet_encode(vecs, enc.lap_eigvals, s, "pe.", variant)
        return ad.concat([x, pe], axis=1), e

    def gps_layer(self, i, x, e, batch: GraphBatch, enc, training=False, rng=None):
        c, s = self.cfg, self.store
        p = f"layers.{i}."
        src, dst, seg = batch.src, batch.dst, batch.segment
        branches = []
        e_next = e
        if c.mpnn != "none":
            gate = None
            if c.uses_peg:
                if enc is None or enc.rel_dist is None:
                    raise ConfigError("PEG gating needs relative distances")
                gate = peg_gate(enc.rel_dist, s, p + "mpnn.")
            if c.mpnn == "gine":
                xm, e_next = gine_layer(x, e, src, dst, s, p + "mpnn.", gate, c.gine_edge_linear)
            else:
                xm, e_hat = gatedgcn_layer(x, e, src, dst, s, p + "mpnn.", gate)
                e_hat = ad.dropout(e_hat, c.dropout, training, rng)
                e_next = ad.batchnorm(e_hat + e, s[p + "bn_edge.gamma"], s[p + "bn_edge.beta"],
                                      s.bn[p + "bn_edge"], training)
            xm = ad.dropout(xm, c.dropout, training, rng)
            branches.append(ad.batchnorm(xm + x, s[p + "bn_local.gamma"], s[p + "bn_local.beta"],
                                         s.bn[p + "bn_local"], training))
        if c.attn != "none":
            if c.attn == "transformer":
                xt = full_attention(x, s, p + "attn.", c.heads, seg, c.attn_dropout, training, rng)
            else:
                xt = performer_attention(x, s, p + "attn.", c.heads,
                                         self.features[p + "attn.features"], seg)
            xt = ad.dropout(xt, c.dropout, training, rng)
            branches.append(ad.batchnorm(xt + x, s[p + "bn_attn.gamma"], s[p + "bn_attn.beta"],
                                         s.bn[p + "bn_attn"], training))
        h = branches[0] if len(branches) == 1 else branches[0] + branches[1]
        ff = ad.dropout(ad.relu(_lin(s, p + "ff1", h)), c.dropout, training, rng)
        ff = ad.dropout(_lin(s, p + "ff2", ff), c.dropout, training, rng)
        out = ad.batchnorm(h + ff, s[p + "bn_ff.gamma"], s[p + "bn_ff.beta"],
                           s.bn[p + "bn_ff"], training)
        return out, e_next

    def embed(self, batch, enc, training=False, rng=None):
        """Node and edge representations after the last GPS layer."""
        x, e = self.encode_inputs(batch, enc, training, rng)
        for i in range(self.cfg.layers):
            x, e = self.gps_layer(i, x, e, batch, enc, training, rng)
        return x, e

    def head(self, x, batch):
        s = self.store
        if self.cfg.task == "graph":
            g = pool_graph(x, batch.segment, batch.num_graphs, self.cfg.pooling)
            return _lin(s, "head.l2", ad.relu(_lin(s, "head.l1", g)))
        return _lin(s, "head.l1", x)

    def forward(self, batch, enc, training=False, rng=None) -> Value:
        x, _ = self.embed(batch, enc, training, rng)
        return self.head(x, batch)

    __call__ = forward

    # -- checkpoints ----------------------------------------------------
    def save(self, path) -> None:
        s = self.store
        manifest = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "params": [[k, list(v.shape)] for k, v in s],
            "bn": [[k, len(st.running_mean)] for k, st in s.bn.items()],
            "features": [[k, list(w.shape)] for k, w in self.features.items()],
        }
        with open(path, "wb") as fh:
            fh.write(b"GPSNET-CKPT\n")
            fh.write(json.dumps(manifest).encode() + b"\n")
            for _, v in s:
                fh.write(v.data.astype("<f8").tobytes())
            for st in s.bn.values():
                fh.write(st.running_mean.astype("<f8").tobytes())
                fh.write(st.running_var.astype("<f8").tobytes())
            for w in self.features.values():
                fh.write(w.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "GPSModel":
        with open(path, "rb") as fh:
            if fh.readline() != b"GPSNET-CKPT\n":
                raise ValueError("not a gpsnet checkpoint")
            manifest = json.loads(fh.readline())
            if manifest["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {manifest['version']}")
            raw = np.frombuffer(fh.read(), dtype="<f8")
        model = cls(ModelConfig(**manifest["config"]))
        pos = 0

        def take(shape):
            nonlocal pos
            size = int(np.prod(shape))
            out = raw[pos:pos + size].reshape(shape).astype(np.float64)
            pos += size
            return out
        for name, shape in manifest["params"]:
            model.store[name].data = take(shape)
        for name, dim in manifest["bn"]:
            model.store.bn[name].running_mean = take((dim,))
            model.store.bn[name].running_var = take((dim,))
        for name, shape in manifest["features"]:
            model.features[name] = take(shape)
        if pos != raw.size:
            raise ValueError("checkpoint payload size does not match its manifest")
        return model
