import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import connected_random_graph
from gpsnet.autodiff import ParamStore, Value
from gpsnet.graph import Graph
from gpsnet.model import GPSModel, ModelConfig
from gpsnet.train import (TrainingError, TrainSettings, TrainState, adamw_step, evaluate, fit,
                          is_better, loss, make_dataset, metric_value, train_epoch,
                          warmup_cosine_lr)


def one_param(value, grad):
    s = ParamStore()
    s.add("w", np.atleast_1d(np.asarray(value, float)))
    s["w"].grad = np.atleast_1d(np.asarray(grad, float))
    return s


def tiny_model(**kw):
    base = dict(hidden_dim=8, layers=1, heads=2, pe="rwse", rwse_m=4, pe_dim=3, node_types=4,
                edge_types=3, attn_dropout=0.0, seed=0)
    base.update(kw)
    return GPSModel(ModelConfig(**base))


def tiny_data(n=12, seed=0):
    gs = [connected_random_graph(5 + i % 4, 0.3, seed + i) for i in range(n)]
    return make_dataset(gs, rwse_m=4)


# -- optimizer ---------------------------------------------------------------------

def test_adamw_first_step_moves_by_lr():
    s = one_param(1.0, 1.0)
    adamw_step(s, 0.1)
    assert s["w"].data[0] == pytest.approx(0.9, abs=1e-7)
    assert s.step == 1


def test_adamw_zero_gradient_and_pure_decay():
    s = one_param(1.0, 0.0)
    adamw_step(s, 0.1)
    assert s["w"].data[0] == 1.0
    s = one_param(1.0, 0.0)
    adamw_step(s, 0.1, weight_decay=0.1)
    assert s["w"].data[0] == pytest.approx(0.99, abs=1e-15)


def test_adamw_decay_shrinks_geometrically():
    s = one_param([2.0, -3.0], [0.0, 0.0])
    for _ in range(10):
        s["w"].grad = np.zeros(2)
        adamw_step(s, 0.5, weight_decay=0.2)
    assert np.allclose(s["w"].data, np.array([2.0, -3.0]) * 0.9 ** 10, atol=1e-14)


def test_adamw_bias_correction_constant_gradient():
    # with a constant gradient the corrected step is lr * g / (|g| + eps) every time
    s = one_param(0.0, 0.3)
    for t in range(5):
        s["w"].grad = np.array([0.3])
        adamw_step(s, 0.01)
    assert s["w"].data[0] == pytest.approx(-0.05 * 0.3 / (0.3 + 1e-8), abs=1e-15)


def test_adamw_rejects_non_finite_gradients_by_name():
    s = one_param(1.0, np.nan)
    with pytest.raises(TrainingError, match="'w'"):
        adamw_step(s, 0.1)
    assert s.step == 0 and s["w"].data[0] == 1.0


@given(st.integers(0, 10_000))
def test_adamw_is_bit_deterministic(seed):
    r = np.random.default_rng(seed)
    grads = r.normal(size=(6, 4))
    runs = []
    for _ in range(2):
        s = one_param(np.ones(4), np.zeros(4))
        for g in grads:
            s["w"].grad = g.copy()
            adamw_step(s, 1e-2, weight_decay=1e-3)
        runs.append(s["w"].data.copy())
    assert np.array_equal(*runs)


# -- schedule ------------------------------------------------------------------------

def test_schedule_examples():
    assert warmup_cosine_lr(0, 1.0, 4, 20) == 0.25
    assert warmup_cosine_lr(3, 1.0, 4, 20) == 1.0
    assert warmup_cosine_lr(4, 1.0, 4, 20) == 1.0
    assert warmup_cosine_lr(12, 1.0, 4, 20) == pytest.approx(0.5, abs=1e-15)
    assert warmup_cosine_lr(20, 1.0, 4, 20) == pytest.approx(0.0, abs=1e-15)
    assert warmup_cosine_lr(0, 2e-3, 0, 10) == 2e-3
    for bad in [(-1, 1.0, 2, 10), (11, 1.0, 2, 10), (0, 1.0, 10, 10)]:
        with pytest.raises(ValueError):
            warmup_cosine_lr(*bad)


@given(st.integers(1, 50), st.integers(1, 400))
def test_schedule_is_bounded_and_monotone_after_warmup(warm, extra):
    total = warm + extra
    lrs = [warmup_cosine_lr(t, 1.0, warm, total) for t in range(total + 1)]
    assert all(0.0 <= x <= 1.0 for x in lrs)
    tail = lrs[warm:]
    assert all(a >= b for a, b in zip(tail, tail[1:]))
    # no jump where warmup hands over to the cosine
    assert lrs[warm - 1] == lrs[warm] == 1.0


# -- losses and metrics ------------------------------------------------------------

def test_loss_examples():
    assert float(loss(Value(np.array([[1.0], [3.0]])), [2.0, 2.0], "l1").data) == 1.0
    ce = float(loss(Value(np.zeros((2, 4))), [1, 3], "cross_entropy").data)
    assert ce == pytest.approx(math.log(4), abs=1e-15)
    with pytest.raises(ValueError):
        loss(Value(np.zeros((2, 3))), [0, 3], "cross_entropy")
    with pytest.raises(ValueError):
        loss(Value(np.zeros((2, 1))), [0.0, 1.0], "hinge")


def test_cross_entropy_gradient_matches_differences():
    r = np.random.default_rng(0)
    z = r.normal(size=(5, 3))
    labels = np.array([0, 2, 1, 2, 2])
    for kind in ("cross_entropy", "weighted_ce"):
        v = Value(z.copy(), requires_grad=True)
        loss(v, labels, kind).backward()
        num = np.zeros_like(z)
        h = 1e-5
        for idx in np.ndindex(z.shape):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            num[idx] = (float(loss(Value(zp), labels, kind).data)
                        - float(loss(Value(zm), labels, kind).data)) / (2 * h)
        assert np.abs(num - v.grad).max() < 1e-7


def test_weighted_ce_balances_classes():
    # class 0 appears three times, class 1 once: both classes get equal total weight
    z = np.array([[2.0, 0.0], [2.0, 0.0], [2.0, 0.0], [2.0, 0.0]])
    labels = [0, 0, 0, 1]
    got = float(loss(Value(z), labels, "weighted_ce").data)
    lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    want = -(0.5 * lp[0, 0] + 0.5 * lp[3, 1])
    assert got == pytest.approx(want, abs=1e-14)
    uniform = [0, 1, 0, 1]
    assert float(loss(Value(z), uniform, "weighted_ce").data) == pytest.approx(
        float(loss(Value(z), uniform, "cross_entropy").data), abs=1e-15)


def test_metrics():
    assert metric_value(np.array([[1.0], [2.0]]), np.array([0.0, 4.0]), "mae") == 1.5
    pred = np.array([[0.1, 0.9], [0.8, 0.2], [0.3, 0.7]])
    assert metric_value(pred, np.array([1, 1, 1]), "accuracy") == pytest.approx(2 / 3)
    assert is_better("mae", 0.1, 0.2) and is_better("accuracy", 0.9, 0.8)
    assert is_better("mae", 0.5, math.nan) and not is_better("mae", math.nan, 0.5)


def test_evaluate_known_predictions():
    # an untrained zero-layer model with zeroed head predicts exactly 0
    m = tiny_model(layers=0)
    for name, p in m.store:
        if name.startswith("head."):
            p.data[...] = 0.0
    gs = [Graph.from_edges(2, [(0, 1)], [0, 1], [0], y) for y in (1.0, -3.0)]
    ds = make_dataset(gs, rwse_m=4)
    assert evaluate(m, ds, "mae") == 2.0
    assert math.isnan(evaluate(m, ds.subset([]), "mae"))


# -- the loop ----------------------------------------------------------------------

def test_zero_learning_rate_leaves_parameters_unchanged():
    m = tiny_model()
    before = m.store.snapshot()
    state = TrainState(m)
    s = TrainSettings(batch_size=4, lr=0.0, weight_decay=0.0, epochs=2, warmup_epochs=1)
    train_epoch(state, tiny_data(), s)
    for name, p in m.store:
        assert np.array_equal(p.data, before["params"][name]), name
    assert state.step == 3 and state.epoch == 1


def test_train_metric_equals_separate_evaluation():
    m = tiny_model()
    data = tiny_data()
    state = TrainState(m)
    em = train_epoch(state, data, TrainSettings(batch_size=5, epochs=3, warmup_epochs=1))
    assert abs(em.train_metric - evaluate(m, data, "mae")) < 1e-12


def test_train_metric_schedule():
    state = TrainState(tiny_model())
    s = TrainSettings(batch_size=6, epochs=3, warmup_epochs=1, train_eval_every=0)
    out = [train_epoch(state, tiny_data(), s).train_metric for _ in range(3)]
    assert math.isnan(out[0]) and math.isnan(out[1]) and not math.isnan(out[2])


def test_single_graph_overfits():
    m = tiny_model(hidden_dim=16, layers=2, pe="none", attn="none")
    g = connected_random_graph(6, 0.4, 3)
    ds = make_dataset([g])
    s = TrainSettings(batch_size=1, lr=3e-3, weight_decay=0.0, epochs=200, warmup_epochs=5,
                      train_eval_every=0)
    rows = fit(TrainState(m), ds, ds, None, s)
    # the training loss is the target here; eval mode swaps in running
    # variance with the n/(n-1) correction, which on 6 nodes is not small
    assert rows[-1]["train_loss"] < 1e-3
    assert rows[-1]["train_loss"] < rows[0]["train_loss"]


def test_fit_restores_best_and_writes_rows():
    m = tiny_model()
    data = tiny_data(16)
    train, val = data.subset(range(12)), data.subset(range(12, 16))
    state = TrainState(m)
    rows = fit(state, train, val, val, TrainSettings(batch_size=4, lr=5e-3, epochs=4,
                                                    warmup_epochs=1))
    assert [r["epoch"] for r in rows] == [1, 2, 3, 4]
    best = min(rows, key=lambda r: r["val_metric"])
    assert state.best.epoch == best["epoch"]
    assert evaluate(m, val, "mae") == pytest.approx(best["val_metric"], abs=1e-12)
    assert all(rows[i]["wall_seconds"] <= rows[i + 1]["wall_seconds"] for i in range(3))


def test_training_is_bit_deterministic():
    outs = []
    for _ in range(2):
        m = tiny_model(attn="performer", m_feat=8, attn_dropout=0.3, dropout=0.1)
        state = TrainState(m)
        s = TrainSettings(batch_size=4, epochs=2, warmup_epochs=1, redraw_features=True)
        train_epoch(state, tiny_data(), s)
        train_epoch(state, tiny_data(), s)
        outs.append(m.store.snapshot())
    for name in outs[0]["params"]:
        assert np.array_equal(outs[0]["params"][name], outs[1]["params"][name])


def test_nan_loss_aborts_with_location():
    m = tiny_model()
    g = connected_random_graph(5, 0.3, 0)
    bad = Graph.from_arcs(g.num_nodes, g.src, g.dst, g.node_feat, g.edge_feat, float("nan"))
    with pytest.raises(TrainingError, match="batch 0"):
        train_epoch(TrainState(m), make_dataset([bad], rwse_m=4),
                    TrainSettings(batch_size=1, epochs=2, warmup_epochs=1))
