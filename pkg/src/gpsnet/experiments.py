"""Config-driven runs: training, ablation grids, expressivity checks, attention timing."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Value
from .encodings import lap_pe, pair_distances, rwse, wl_colors, wl_same_coloring
from .graph import DECALIN_ANCHORS, gen_csl, gen_decalin, load_graphs
from .model import (ATTN_KINDS, MPNN_KINDS, PE_ENCODERS, PE_KINDS, ConfigError, GPSModel,
                    ModelConfig, full_attention, performer_attention)
from .train import (CSV_FIELDS, LOSS_KINDS, METRICS, TrainSettings, TrainState, evaluate,
                    fit, make_dataset)

AXES = {"attn": ATTN_KINDS, "mpnn": MPNN_KINDS, "pe": PE_KINDS}


@dataclass
class RunConfig:
    """One experiment. Defaults are the ZINC reference setup at desk scale."""

    dataset: str = "data/zinc_like.jsonl"
    schema: str = "zinc"
    train_size: int = 1000
    val_size: int = 200
    test_size: int = 200
    task: str = "graph"
    out_dim: int = 1
    layers: int = 10
    hidden_dim: int = 64
    mpnn: str = "gine"
    attn: str = "transformer"
    heads: int = 4
    pe: str = "rwse"
    lap_k: int = 8
    rwse_m: int = 20
    pe_dim: int = 28
    pe_encoder: str = "linear"
    signnet_hidden: int = 16
    m_feat: int = 64
    redraw_features: bool = False
    dropout: float = 0.0
    attn_dropout: float = 0.5
    pooling: str = "sum"
    batch_size: int = 32
    lr: float = 0.001
    epochs: int = 100
    warmup_epochs: int = 5
    weight_decay: float = 1e-5
    loss: str = "l1"
    metric: str = "mae"
    train_eval_every: int = 1
    seed: int = 0
    out_dir: str = "runs"
    run_name: str = ""

    def model_config(self, node_types: int = 28, node_in_dim: int = 0,
                     edge_types: int = 3, edge_in_dim: int = 0) -> ModelConfig:
        return ModelConfig(
            hidden_dim=self.hidden_dim, layers=self.layers, mpnn=self.mpnn, attn=self.attn,
            heads=self.heads, pe=self.pe, lap_k=self.lap_k, rwse_m=self.rwse_m,
            pe_dim=self.pe_dim, pe_encoder=self.pe_encoder, signnet_hidden=self.signnet_hidden,
            dropout=self.dropout, attn_dropout=self.attn_dropout, pooling=self.pooling,
            task=self.task, out_dim=self.out_dim, node_types=node_types,
            node_in_dim=node_in_dim, edge_types=edge_types, edge_in_dim=edge_in_dim,
            m_feat=self.m_feat, seed=self.seed)

    def validate(self) -> None:
        checks = [
            ("loss", self.loss in LOSS_KINDS, f"not in {LOSS_KINDS}"),
            ("metric", self.metric in METRICS, f"not in {METRICS}"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("epochs", self.epochs >= 1, "must be >= 1"),
            ("warmup_epochs", 0 <= self.warmup_epochs < self.epochs, "must lie in [0, epochs)"),
            ("lr", self.lr >= 0, "must be >= 0"),
            ("weight_decay", self.weight_decay >= 0, "must be >= 0"),
            ("train_size", self.train_size >= 1, "must be >= 1"),
            ("train_eval_every", self.train_eval_every >= 0, "must be >= 0"),
            ("val_size", self.val_size >= 0, "must be >= 0"),
            ("test_size", self.test_size >= 0, "must be >= 0"),
            ("dropout", 0 <= self.dropout < 1, "must lie in [0, 1)"),
            ("attn_dropout", 0 <= self.attn_dropout < 1, "must lie in [0, 1)"),
        ]
        for key, ok, why in checks:
            if not ok:
                raise ConfigError(f"{key}: {getattr(self, key)!r} {why}")
        self.model_config().validate()

    def train_settings(self) -> TrainSettings:
        return TrainSettings(batch_size=self.batch_size, lr=self.lr,
                             weight_decay=self.weight_decay, epochs=self.epochs,
                             warmup_epochs=self.warmup_epochs, loss=self.loss,
                             metric=self.metric,
                             train_eval_every=self.train_eval_every,
                             redraw_features=self.redraw_features)

    @property
    def name(self) -> str:
        if self.run_name:
            return self.run_name
        return f"{self.mpnn}-{self.attn}-{self.pe}-s{self.seed}".replace("+", "_")


# -- config text ------------------------------------------------------------

def _convert(key: str, typ, raw: str):
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(RunConfig)}
    seen = set()
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{key}: unknown config key (line {lineno})")
        if key in seen:
            raise ConfigError(f"{key}: given twice (line {lineno})")
        seen.add(key)
        values[key] = _convert(key, types[key], raw)
    cfg = replace(base or RunConfig(), **values)
    cfg.validate()
    return cfg


def format_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(format_config(c)) == c``."""
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{f.name}={v}")
    return "\n".join(out) + "\n"


def load_config(path) -> RunConfig:
    """Read a config file. A relative ``dataset`` resolves against the file's folder."""
    path = Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"))
    ds = Path(cfg.dataset)
    if not ds.is_absolute():
        cfg = replace(cfg, dataset=str((path.parent / ds).resolve()))
    return cfg


# -- single runs --------------------------------------------------------------

def _feature_dims(graphs, schema: str) -> dict:
    if schema == "zinc":
        return {"node_types": 28, "node_in_dim": 0, "edge_types": 3, "edge_in_dim": 0}
    g0 = graphs[0]
    dims = {}
    if g0.node_feat.dtype.kind == "i":
        dims["node_types"] = max(int(g.node_feat.max()) + 1 for g in graphs if g.num_nodes)
        dims["node_in_dim"] = 0
    else:
        dims["node_types"], dims["node_in_dim"] = 0, g0.node_feat.shape[1]
    ef = next((g.edge_feat for g in graphs if g.edge_feat is not None), None)
    if ef is None or ef.dtype.kind == "i":
        dims["edge_types"] = 1 if ef is None else max(
            int(g.edge_feat.max()) + 1 for g in graphs if g.num_arcs)
        dims["edge_in_dim"] = 0
    else:
        dims["edge_types"], dims["edge_in_dim"] = 0, ef.reshape(len(ef), -1).shape[1]
    return dims


def build_model(cfg: RunConfig, graphs=None) -> GPSModel:
    dims = _feature_dims(graphs, cfg.schema) if graphs is not None else {}
    return GPSModel(cfg.model_config(**dims))


def prepare_data(cfg: RunConfig, graphs=None):
    """Load and split the graphs and precompute the encodings the model reads."""
    if graphs is None:
        graphs = load_graphs(cfg.dataset, cfg.schema)
    need = cfg.train_size + cfg.val_size + cfg.test_size
    if len(graphs) < need:
        raise ConfigError(f"dataset: {cfg.dataset} has {len(graphs)} graphs, config needs {need}")
    mc = cfg.model_config()
    t0 = time.perf_counter()
    ds = make_dataset(graphs[:need], lap_k=cfg.lap_k if mc.uses_lap else None,
                      rwse_m=cfg.rwse_m if cfg.pe == "rwse" else None, rel=mc.uses_peg)
    pre = time.perf_counter() - t0
    a, b = cfg.train_size, cfg.train_size + cfg.val_size
    return (ds.subset(range(a)), ds.subset(range(a, b)), ds.subset(range(b, need)),
            graphs, pre)


def run_config(cfg: RunConfig | str | Path, out_dir=None, graphs=None, log=print,
               write_files: bool = True) -> dict:
    """Train one configuration end to end and return its result record.

    Writes ``<name>.csv`` (one row per epoch), ``<name>.json`` and
    ``<name>.ckpt`` under ``out_dir`` (default: the config's ``out_dir``).
    Final metrics use the best-validation parameters.
    """
    if not isinstance(cfg, RunConfig):
        cfg = load_config(cfg)
    cfg.validate()
    train, val, test, graphs, pre_seconds = prepare_data(cfg, graphs)
    model = build_model(cfg, graphs)
    n_params = model.num_params()
    log(f"[{cfg.name}] parameters: {n_params}")
    settings = cfg.train_settings()
    state = TrainState(model)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    csv_fh = writer = None
    if write_files:
        out.mkdir(parents=True, exist_ok=True)
        csv_fh = open(out / f"{cfg.name}.csv", "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(csv_fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        writer.writeheader()

    def on_epoch(row):
        if writer:
            writer.writerow(row)
            csv_fh.flush()
        if row["epoch"] % 10 == 0 or row["epoch"] == settings.epochs:
            log(f"[{cfg.name}] epoch {row['epoch']}: loss {row['train_loss']:.4f} "
                f"val {row['val_metric']:.4f} ({row['wall_seconds']:.0f}s)")
    try:
        rows = fit(state, train, val if len(val) else None, test if len(test) else None,
                   settings, on_epoch)
    finally:
        if csv_fh:
            csv_fh.close()
    final_train = evaluate(model, train, settings.metric)
    record = {
        "name": cfg.name,
        "config": format_config(cfg),
        "num_params": n_params,
        "best_epoch": state.best.epoch,
        "train_metric": final_train,
        "val_metric": evaluate(model, val, settings.metric),
        "test_metric": evaluate(model, test, settings.metric),
        "last_train_loss": rows[-1]["train_loss"],
        "last_train_metric": rows[-1]["train_metric"],
        "epoch_train_seconds": float(np.mean([r["train_seconds"] for r in rows])),
        "epoch_eval_seconds": float(np.mean([r["eval_seconds"] for r in rows])),
        "total_seconds": rows[-1]["wall_seconds"],
        "precompute_seconds": pre_seconds,
    }
    if write_files:
        model.save(out / f"{cfg.name}.ckpt")
        (out / f"{cfg.name}.json").write_text(json.dumps(record, indent=2) + "\n",
                                              encoding="utf-8")
    log(f"[{cfg.name}] best epoch {record['best_epoch']}: val {record['val_metric']:.4f} "
        f"test {record['test_metric']:.4f} train {final_train:.4f}")
    return record


# -- ablations ----------------------------------------------------------------

def _grid_cell(args):
    cfg, out_dir, write_files = args
    return run_config(cfg, out_dir=out_dir, write_files=write_files, log=lambda *_: None)


def ablation_grid(base: RunConfig, axis: str, seeds: int = 1, out_dir=None,
                  workers: int = 1, write_files: bool = True, log=print) -> list[dict]:
    """Sweep one axis over all of its values with everything else fixed.

    Each row holds the axis value, metric mean and standard deviation over
    ``seeds`` runs (seeds ``base.seed .. base.seed+seeds-1``), parameter
    count and mean training seconds per epoch.
    """
    if axis not in AXES:
        raise ConfigError(f"axis: {axis!r} not in {tuple(AXES)}")
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    out_dir = Path(out_dir if out_dir is not None else base.out_dir) / f"ablate_{axis}"
    cells = []
    for value in AXES[axis]:
        for s in range(seeds):
            cfg = replace(base, **{axis: value}, seed=base.seed + s,
                          run_name=f"{axis}={value}-s{base.seed + s}".replace("+", "_"))
            cfg.validate()
            cells.append((cfg, out_dir, write_files))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_grid_cell, cells))
    else:
        records = []
        for c in cells:
            log(f"ablate {axis}: {c[0].run_name}")
            records.append(_grid_cell(c))
    rows = []
    for i, value in enumerate(AXES[axis]):
        recs = records[i * seeds:(i + 1) * seeds]
        vals = np.array([r["test_metric"] for r in recs])
        rows.append({
            axis: value,
            "metric": base.metric,
            "mean": float(vals.mean()),
            "sd": float(vals.std(ddof=1)) if seeds > 1 else 0.0,
            "val_mean": float(np.mean([r["val_metric"] for r in recs])),
            "num_params": recs[0]["num_params"],
            "epoch_seconds": float(np.mean([r["epoch_train_seconds"] for r in recs])),
        })
    if write_files:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"ablation_{axis}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return rows


def format_table(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    keys = list(rows[0])
    cells = [[f"{r[k]:.4f}" if isinstance(r[k], float) else str(r[k]) for k in keys]
             for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    line = lambda vals: "  ".join(v.ljust(w) for v, w in zip(vals, widths))
    return "\n".join([line(keys)] + [line(c) for c in cells])


# -- expressivity -------------------------------------------------------------

LINK_FEATURE_NOTE = ("link feature of (u, v) = [f(u), f(v), |f(u) - f(v)|], "
                     "the last entry being the relative distance on a virtual arc u-v")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ExpressivityReport:
    checks: list = field(default_factory=list)
    header: str = LINK_FEATURE_NOTE
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def format(self) -> str:
        lines = [f"# {self.header}"]
        lines += [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}" for c in self.checks]
        lines.append(f"{sum(c.passed for c in self.checks)}/{len(self.checks)} checks passed "
                     f"in {self.seconds:.2f}s")
        return "\n".join(lines)


def _row_multiset(a: np.ndarray) -> np.ndarray:
    return a[np.lexsort(a.T[::-1])]


def link_feature(node_feat: np.ndarray, u: int, v: int) -> np.ndarray:
    f = np.asarray(node_feat, dtype=np.float64).reshape(len(node_feat), -1)
    return np.concatenate([f[u], f[v], pair_distances(f, [u], [v])])


def expressivity_suite(equal_tol: float = 1e-9, diff_tol: float = 1e-6) -> ExpressivityReport:
    """Four exact checks on CSL(11, 2) / CSL(11, 3) and on the decalin link pair."""
    t0 = time.perf_counter()
    rep = ExpressivityReport()
    g2, g3 = gen_csl(11, 2), gen_csl(11, 3)

    h2, h3 = wl_colors(g2).histogram, wl_colors(g3).histogram
    same = wl_same_coloring(g2, g3)
    rep.checks.append(Check("CSL(11,2) vs CSL(11,3) 1-WL histograms equal", h2 == h3 and same,
                            f"histograms {h2} / {h3}, joint refinement balanced: {same}"))

    r2, r3 = _row_multiset(rwse(g2, 8)), _row_multiset(rwse(g3, 8))
    gap = float(np.abs(r2 - r3).max())
    rep.checks.append(Check("CSL pair separated by RWSE-8", gap > diff_tol,
                            f"max gap between sorted RWSE rows {gap:.3e}"))

    l2, l3 = lap_pe(g2, 8)[0], lap_pe(g3, 8)[0]
    gap = float(np.abs(l2 - l3).max())
    rep.checks.append(Check("CSL pair separated by LapPE-8 eigenvalues", gap > diff_tol,
                            f"max eigenvalue gap {gap:.3e}"))

    dec = gen_decalin()
    a, b, d = DECALIN_ANCHORS["a"], DECALIN_ANCHORS["b"], DECALIN_ANCHORS["d"]
    wl = wl_colors(dec).colors.astype(np.float64)
    rw = rwse(dec, 8)
    pe = lap_pe(dec, 8)[1]
    wl_gap = float(np.abs(link_feature(wl, a, d) - link_feature(wl, b, d)).max())
    rw_gap = float(np.abs(link_feature(rw, a, d) - link_feature(rw, b, d)).max())
    dist_ad = float(pair_distances(pe, [a], [d])[0])
    dist_bd = float(pair_distances(pe, [b], [d])[0])
    ok = wl_gap <= equal_tol and rw_gap <= equal_tol and abs(dist_ad - dist_bd) > diff_tol
    rep.checks.append(Check(
        "decalin links (a,d) vs (b,d): equal under WL and RWSE, split by LapPE distance", ok,
        f"WL gap {wl_gap:.1e}, RWSE gap {rw_gap:.1e}, "
        f"LapPE distance {dist_ad:.6f} vs {dist_bd:.6f}"))
    rep.seconds = time.perf_counter() - t0
    return rep


# -- timing -------------------------------------------------------------------

def timing_benchmark(sizes: Sequence[int], d: int = 64, heads: int = 4, m_feat: int = 64,
                     repeats: int = 5, seed: int = 0) -> list[dict]:
    """Median eval-mode forward time of full vs Performer attention on one graph of N nodes."""
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    rng = ad.rng_stream(seed, "bench")
    store = ParamStore()
    for name, n_out in (("attn.qkv", 3 * d), ("attn.o", d)):
        store.glorot(name + ".w", d, n_out, rng)
        store.zeros(name + ".b", n_out)
    feats = rng.normal(size=(m_feat, d // heads))
    rows = []
    for n in sizes:
        x = Value(rng.normal(size=(n, d)))
        seg = np.zeros(n, dtype=np.int64)

        def med(fn):
            ts = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn()
                ts.append(time.perf_counter() - t0)
            return float(np.median(ts))
        t_full = med(lambda: full_attention(x, store, "attn.", heads, seg))
        t_perf = med(lambda: performer_attention(x, store, "attn.", heads, feats, seg))
        rows.append({"N": n, "t_full": t_full, "t_perf": t_perf})
    return rows


def performer_fidelity(n: int = 64, d: int = 16, m_feats: Sequence[int] = (8, 64, 512),
                       seeds: int = 10, heads: int = 1) -> dict[int, float]:
    """Mean absolute gap between Performer and exact attention outputs.

    Each seed draws fresh inputs, Glorot projections and Gaussian features;
    the returned value per ``m`` averages the per-element gap over seeds.
    """
    gaps = {m: [] for m in m_feats}
    seg = np.zeros(n, dtype=np.int64)
    for seed in range(seeds):
        rng = ad.rng_stream(seed, "fidelity")
        store = ParamStore()
        store.glorot("attn.qkv.w", d, 3 * d, rng)
        store.zeros("attn.qkv.b", 3 * d)
        store.glorot("attn.o.w", d, d, rng)
        store.zeros("attn.o.b", d)
        x = Value(rng.normal(size=(n, d)))
        exact = full_attention(x, store, "attn.", heads, seg).data
        for m in m_feats:
            feats = rng.normal(size=(m, d // heads))
            approx = performer_attention(x, store, "attn.", heads, feats, seg).data
            gaps[m].append(float(np.abs(approx - exact).mean()))
    return {m: float(np.mean(v)) for m, v in gaps.items()}


def doubling_ratios(rows: Sequence[dict], key: str) -> list[float]:
    return [b[key] / a[key] for a, b in zip(rows[:-1], rows[1:])]
