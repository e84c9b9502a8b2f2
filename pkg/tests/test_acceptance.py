"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -s`` to watch the lines
appear; a summary is printed when the module finishes either way.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import test_autodiff
import test_model
import test_train
from gpsnet import autodiff as ad
from gpsnet.autodiff import BatchNormState, ParamStore, Value, grad_check
from gpsnet.experiments import (doubling_ratios, expressivity_suite, load_config,
                                performer_fidelity, run_config, timing_benchmark)
from gpsnet.graph import load_graphs
from gpsnet.model import (GPSModel, ModelConfig, gatedgcn_layer, gine_layer, peg_gate,
                          pool_graph, positive_features, signnet_encode)

ROOT = Path(__file__).resolve().parents[1]
RESULTS = []


def report(capsys, number, title, passed, detail, seconds):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({seconds:.1f}s) {detail}"
    RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line, flush=True)
    return passed


@pytest.fixture(scope="module", autouse=True)
def summary():
    yield
    if RESULTS:
        print("\n\nacceptance summary")
        print("\n".join(RESULTS))


# -- 1. expressivity -----------------------------------------------------------------

def test_criterion_1_expressivity(capsys):
    t0 = time.perf_counter()
    rep = expressivity_suite()
    dt = time.perf_counter() - t0
    failed = [c.name for c in rep.checks if not c.passed]
    ok = rep.passed and len(rep.checks) == 4 and dt < 5.0
    report(capsys, 1, "CSL and decalin separation", ok,
           f"{len(rep.checks) - len(failed)}/4 checks" + (f", failed: {failed}" if failed else ""),
           dt)
    assert ok


# -- 2. gradient integrity -----------------------------------------------------------

def _op_cases(rng):
    """(name, loss builder, leaves) for every differentiable op and model layer."""
    def leaf(*shape, lo=-1.0, hi=1.0):
        return Value(rng.uniform(lo, hi, size=shape), requires_grad=True)

    def wsum(out, seed=7):
        w = np.random.default_rng(seed).normal(size=out.shape)
        return ad.total(out * w)

    a, b, pos = leaf(4, 3), leaf(4, 3, lo=0.5, hi=2.0), leaf(4, 3, lo=0.3, hi=2.0)
    col, w, bias = leaf(1, 3), leaf(3, 2), leaf(2)
    x7 = leaf(7, 3)
    seg = np.array([0, 0, 1, 1, 1, 3, 3])
    q, k, v = leaf(9, 8), leaf(9, 8), leaf(9, 8)
    aseg = np.array([0, 0, 0, 0, 1, 1, 2, 2, 2])
    fq, fk = leaf(9, 5, lo=0.1, hi=1.0), leaf(9, 5, lo=0.1, hi=1.0)
    gam, bet = leaf(3, lo=0.5, hi=1.5), leaf(3)
    cases = [
        ("add", lambda: wsum(ad.add(a, col)), [a, col]),
        ("sub", lambda: wsum(ad.sub(a, b)), [a, b]),
        ("mul", lambda: wsum(ad.mul(a, b)), [a, b]),
        ("div", lambda: wsum(ad.div(a, b)), [a, b]),
        ("scale", lambda: wsum(ad.scale(a, -1.7)), [a]),
        ("relu", lambda: wsum(ad.relu(a)), [a]),
        ("sigmoid", lambda: wsum(ad.sigmoid(a)), [a]),
        ("exp", lambda: wsum(ad.exp(a)), [a]),
        ("log", lambda: wsum(ad.log(pos)), [pos]),
        ("absolute", lambda: wsum(ad.absolute(a)), [a]),
        # b is treated as a constant, so only a is checked
        ("stop_gradient", lambda: wsum(a * ad.stop_gradient(b)), [a]),
        ("elementwise", lambda: wsum(ad.elementwise("sigmoid", a)), [a]),
        ("total", lambda: ad.total(a * b), [a, b]),
        ("mean", lambda: ad.mean(a * b), [a, b]),
        ("sum_axis", lambda: wsum(ad.sum_axis(a, 1, True)), [a]),
        ("reshape", lambda: wsum(ad.reshape(a, (2, 6))), [a]),
        ("transpose", lambda: wsum(ad.transpose(a)), [a]),
        ("concat", lambda: wsum(ad.concat([a, b], axis=1)), [a, b]),
        ("slice_cols", lambda: wsum(ad.slice_cols(a, 1, 3)), [a]),
        ("split_cols", lambda: wsum(ad.split_cols(a, [2, 1])[0]) + wsum(ad.split_cols(a, [2, 1])[1], 3), [a]),
        ("matmul", lambda: wsum(ad.matmul(a, w)), [a, w]),
        ("affine", lambda: wsum(ad.affine(a, w, bias)), [a, w, bias]),
        ("softmax_rows", lambda: wsum(ad.softmax_rows(a)), [a]),
        ("log_softmax_rows", lambda: wsum(ad.log_softmax_rows(a)), [a]),
        ("segment_sum", lambda: wsum(ad.segment_sum(x7, seg, 4)), [x7]),
        ("segment_mean", lambda: wsum(ad.segment_mean(x7, seg, 4)), [x7]),
        ("segment_max", lambda: wsum(ad.segment_max(x7, np.array([0, 0, 1, 1, 1, 2, 2]), 3)), [x7]),
        ("gather_rows", lambda: wsum(ad.gather_rows(x7, [6, 0, 0, 3, 2])), [x7]),
        ("batchnorm/train", lambda: wsum(ad.batchnorm(x7, gam, bet, BatchNormState(3), True)),
         [x7, gam, bet]),
        ("batchnorm/eval", lambda: wsum(ad.batchnorm(x7, gam, bet, BatchNormState(3), False)),
         [x7, gam, bet]),
        ("dropout", lambda: wsum(ad.dropout(x7, 0.4, True, np.random.default_rng(3))), [x7]),
        ("segment_attention", lambda: wsum(ad.segment_attention(q, k, v, aseg, heads=2)),
         [q, k, v]),
        ("segment_attention/dropout",
         lambda: wsum(ad.segment_attention(q, k, v, aseg, 2, 0.3, True, np.random.default_rng(5))),
         [q, k, v]),
        ("linear_attention", lambda: wsum(ad.linear_attention(fq, fk, v, aseg)), [fq, fk, v]),
    ]

    # the feature map's max stabilizer only cancels inside the normalized
    # attention, so the features are checked through it
    feats = rng.normal(size=(6, 4))
    xq, xk, xv = leaf(9, 4), leaf(9, 4), leaf(9, 4)
    cases.append(("positive_features", lambda: wsum(ad.linear_attention(
        positive_features(xq, feats, True), positive_features(xk, feats, False), xv, aseg)),
        [xq, xk, xv]))

    d = 4
    store = ParamStore()
    for name, shape in [("g.eps", (1,)), ("g.mlp1.w", (d, d)), ("g.mlp1.b", (d,)),
                        ("g.mlp2.w", (d, d)), ("g.mlp2.b", (d,)), ("p.peg_w", (1,)),
                        ("p.peg_b", (1,))] + [(f"q.{n}.{p}", (d, d) if p == "w" else (d,))
                                              for n in ("A1", "A2", "A3", "B1", "B2")
                                              for p in ("w", "b")]:
        store.add(name, rng.normal(scale=0.5, size=shape))
    src, dst = np.array([0, 1, 1, 2, 2, 3]), np.array([1, 0, 2, 1, 3, 2])
    xn, en = leaf(4, d), leaf(6, d)
    dist = rng.uniform(0, 2, 6)
    gp = dict(store.params, x=xn, e=en)
    cases.append(("gine_layer", lambda: wsum(gine_layer(xn, en, src, dst, store, "g.")[0]), gp))
    cases.append(("gatedgcn_layer", lambda: wsum(gatedgcn_layer(xn, en, src, dst, store, "q.")[0])
                  + wsum(gatedgcn_layer(xn, en, src, dst, store, "q.")[1], 3), gp))
    cases.append(("peg_gate", lambda: wsum(peg_gate(dist, store, "p.")),
                  [store["p.peg_w"], store["p.peg_b"]]))
    cases.append(("pool_graph", lambda: wsum(pool_graph(x7, np.array([0, 0, 0, 1, 1, 1, 1]), 2,
                                                        "mean")), [x7]))

    sn = ParamStore()
    for name, shape in [("s.phi1.w", (2, 3)), ("s.phi1.b", (3,)), ("s.phi2.w", (3, 3)),
                        ("s.phi2.b", (3,)), ("s.rho1.w", (3, 5)), ("s.rho1.b", (5,)),
                        ("s.rho2.w", (5, 4)), ("s.rho2.b", (4,))]:
        sn.add(name, rng.normal(scale=0.7, size=shape))
    vecs, vals = rng.normal(size=(6, 3)), np.array([0.2, 0.7, 1.3])
    cases.append(("signnet_encode", lambda: wsum(signnet_encode(vecs, vals, sn, "s.", "deepsets")),
                  sn))
    return cases


def _min_relu_margin(cases):
    """Smallest |input| seen by any relu while building the losses once."""
    seen = []
    orig = ad.relu

    def spy(v):
        seen.append(float(np.abs(v.data).min()))
        return orig(v)
    ad.relu = spy
    try:
        for _, f, _ in cases:
            f()
    finally:
        ad.relu = orig
    return min(seen)


def test_criterion_2_gradient_integrity(capsys):
    t0 = time.perf_counter()
    worst = {}
    cases = _op_cases(np.random.default_rng(2021))
    # central differences are only meaningful away from relu kinks
    assert _min_relu_margin(cases) > 1e-2
    for name, f, leaves in cases:
        worst[name] = grad_check(f, leaves)
    for label, kw in (("GPS GINE+Transformer", dict(mpnn="gine", attn="transformer", pe="rwse")),
                      ("GPS GatedGCN+Performer",
                       dict(mpnn="gatedgcn", attn="performer", pe="lappe"))):
        cfg = test_model.small_cfg(**kw, hidden_dim=8, pe_dim=3, m_feat=8)
        model = GPSModel(cfg)
        batch, enc = test_model.toy(cfg, test_model.graphs_for(21, sizes=(5, 6)))
        y = np.array([[0.4], [-1.1]])
        f = lambda: ad.mean(ad.absolute(model.forward(batch, enc, training=True) - y))
        worst[label] = grad_check(f, model.store, coords_per_tensor=12)
    dt = time.perf_counter() - t0
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err < 1e-4 and dt < 120
    report(capsys, 2, "gradient checks", ok,
           f"{len(worst)} cases, worst {err:.2e} ({name})", dt)
    assert ok, {k: v for k, v in worst.items() if v >= 1e-4}


# -- 3. Performer fidelity -----------------------------------------------------------

def test_criterion_3_performer_fidelity(capsys):
    t0 = time.perf_counter()
    gaps = performer_fidelity(n=64, d=16, m_feats=(8, 64, 512), seeds=10)
    dt = time.perf_counter() - t0
    g = [gaps[m] for m in (8, 64, 512)]
    ok = g[0] > g[1] > g[2] and g[2] < 0.05 and dt < 60
    report(capsys, 3, "Performer vs exact attention", ok,
           "mean abs gap " + ", ".join(f"m={m}: {gaps[m]:.4f}" for m in (8, 64, 512)), dt)
    assert ok


# -- 4. scaling ----------------------------------------------------------------------

def test_criterion_4_scaling(capsys):
    t0 = time.perf_counter()
    rows = timing_benchmark([1024, 2048, 4096])
    dt = time.perf_counter() - t0
    full, perf = doubling_ratios(rows, "t_full"), doubling_ratios(rows, "t_perf")
    ok = all(r <= 3.5 for r in perf) and all(r >= 3.0 for r in full) and dt < 300
    report(capsys, 4, "attention time per doubling of N", ok,
           f"full {[round(r, 2) for r in full]}, performer {[round(r, 2) for r in perf]}", dt)
    assert ok


# -- 5. ZINC-like direction check ----------------------------------------------------

@pytest.mark.slow
def test_criterion_5_zinc_direction(capsys, tmp_path):
    t0 = time.perf_counter()
    base = load_config(ROOT / "configs" / "zinc_desk.cfg")
    assert (base.train_size, base.val_size, base.test_size, base.epochs) == (1000, 200, 200, 100)
    graphs = load_graphs(base.dataset, base.schema)
    res = {}
    for seed in range(4):
        for pe in ("rwse", "none"):
            cfg = replace(base, pe=pe, seed=seed)
            rec = run_config(cfg, out_dir=tmp_path, graphs=graphs, write_files=False,
                             log=lambda *_: None)
            res[pe, seed] = rec
            with capsys.disabled():
                print(f"\n  seed {seed} pe={pe}: best val {rec['val_metric']:.4f} "
                      f"(epoch {rec['best_epoch']}), train after 100 epochs "
                      f"{rec['last_train_metric']:.4f}, {rec['total_seconds']:.0f}s", flush=True)
    dt = time.perf_counter() - t0
    wins = sum(res["rwse", s]["val_metric"] < res["none", s]["val_metric"] for s in range(4))
    train = [res["rwse", s]["last_train_metric"] for s in range(4)]
    ok = wins >= 3 and max(train) < 0.35 and dt < 45 * 60
    mean = lambda pe: np.mean([res[pe, s]["val_metric"] for s in range(4)])
    loss = max(res["rwse", s]["last_train_loss"] for s in range(4))
    report(capsys, 5, "RWSE beats no PE on validation MAE", ok,
           f"wins {wins}/4, val MAE rwse {mean('rwse'):.4f} vs none {mean('none'):.4f}, "
           f"max train MAE {max(train):.4f} (train-mode epoch loss {loss:.4f})", dt)
    assert ok


# -- 6. parameter count --------------------------------------------------------------

def test_criterion_6_parameter_count(capsys):
    t0 = time.perf_counter()
    cfg = load_config(ROOT / "configs" / "zinc_gps.cfg")
    n = GPSModel(cfg.model_config()).num_params()
    rel = abs(n - 423_717) / 423_717
    ok = rel < 0.05
    report(capsys, 6, "reference parameter count", ok,
           f"{n} vs 423717 ({100 * rel:.2f}% off)", time.perf_counter() - t0)
    assert ok


# -- 7. property suites --------------------------------------------------------------

def test_criterion_7_property_suites(capsys):
    t0 = time.perf_counter()
    failures = []

    def run(label, fn, *args, **kw):
        try:
            fn(*args, **kw)
        except Exception as exc:          # noqa: BLE001 - collected and reported below
            failures.append(f"{label}: {type(exc).__name__}")

    for kw in test_model.MODEL_VARIANTS[:5]:
        run(f"permutation {kw}", test_model.test_permutation_equivariance, kw=kw)
    for kw in test_model.MODEL_VARIANTS:
        run(f"batch independence {kw}", test_model.test_batch_independence, kw=kw)
    run("signnet flips", test_model.test_signnet_flip_invariance_is_bit_exact)
    run("batchnorm statistics", test_autodiff.test_batchnorm_column_statistics)
    for name in sorted(test_autodiff.LINEAR_MAPS):
        run(f"adjoint {name}", test_autodiff.test_adjoint_duality, name=name)
    run("adamw determinism", test_train.test_adamw_is_bit_deterministic)
    run("training determinism", test_train.test_training_is_bit_deterministic)
    dt = time.perf_counter() - t0
    ok = not failures
    report(capsys, 7, "property suites", ok,
           "all suites hold" if ok else f"failed: {failures}", dt)
    assert ok
