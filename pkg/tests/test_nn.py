from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracle
from lbasim.data import Dataset, SyntheticSpec, generate
from lbasim.fmaq import FmaqConfig
from lbasim.nn import (MLP, LbaLinear, Stage, TrainSchedule, TrainingDiverged, WaQuant, build_mlp, evaluate,
                       flex_bias, landscape_probe, quantize_flex, softmax_cross_entropy, stuck_underflow_rate,
                       train, write_landscape_csv, zeroshot_eval)
from lbasim.qformats import EventKind, FloatFormat, RoundMode, classify_array, quantize_float

M4E3 = FloatFormat(4, 3, 4)
WIDE = FmaqConfig(FloatFormat(23, 8, 127), FloatFormat(40, 10, 400))
LBA8 = FmaqConfig(FloatFormat(4, 3, 7))  # accumulator bias 5


def toy(seed=0, n=120, dim=6, classes=3):
    return generate(SyntheticSpec("gaussian-blobs", dim=dim, classes=classes, samples=n, seed=seed, spread=0.1))


def test_flex_bias_examples():
    assert flex_bias(np.array([0.25, -1.0]), M4E3) == 7
    assert flex_bias(np.zeros(5), M4E3) == 4
    assert flex_bias(np.array([]), M4E3) == 4
    # exactly r_of(7) = 1.9375 must move to the next bias down
    assert flex_bias(np.array([1.9375]), M4E3) == 6
    assert flex_bias(np.array([1.93]), M4E3) == 7


@settings(max_examples=200, deadline=None)
@given(scale=st.floats(1e-6, 1e6), M=st.integers(1, 10), E=st.integers(2, 5))
def test_flex_bias_is_maximal_and_overflow_free(scale, M, E):
    fmt = FloatFormat(M, E, 0)
    t = np.array([scale, -0.3 * scale, 0.0])
    b = flex_bias(t, fmt)
    assert fmt.with_bias(b).r_of > scale
    assert fmt.with_bias(b + 1).r_of <= scale
    assert flex_bias(2 * t, fmt) == b - 1
    q, used = quantize_flex(t, FloatFormat(M, E, 0, flex=True))
    assert used == b
    _, kinds, _, _ = classify_array(q, fmt.with_bias(b))
    assert not np.any(kinds == EventKind.OVERFLOW)


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((4, 5))
    y = np.array([0, 3, 1, 4])
    loss, g = softmax_cross_entropy(z, y)
    h = 1e-6
    for idx in [(0, 0), (2, 3), (3, 4)]:
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        fd = (softmax_cross_entropy(zp, y)[0] - softmax_cross_entropy(zm, y)[0]) / (2 * h)
        assert abs(fd - g[idx]) < 1e-7


def test_wide_accumulator_matches_exact_mlp():
    ds = toy()
    m = build_mlp([6, 16, 16, 3], np.random.default_rng(1))
    exact = m.forward(ds.x)
    wide = m.with_arith(WIDE).forward(ds.x)
    np.testing.assert_allclose(wide, exact, rtol=1e-6, atol=1e-6)
    # and the exact path is an ordinary float matmul MLP
    h = ds.x
    for j, layer in enumerate(m.layers):
        h = h @ layer.weight.astype(np.float64).T + layer.bias
        if j < 2:
            h = np.maximum(h, 0)
    np.testing.assert_allclose(exact, h, rtol=1e-12, atol=1e-12)


def test_zero_input_gives_quantized_bias():
    layer = LbaLinear(np.ones((3, 4)), np.array([0.3, -2.0, 100.0]), LBA8)
    y, _ = MLP([layer]).forward(np.zeros((2, 4))), None
    acc = LBA8.acc_fmt
    want = quantize_float(np.array([0.3, -2.0, 100.0]), acc)
    np.testing.assert_array_equal(y, np.broadcast_to(want, (2, 3)))


def _oracle_forward(m: MLP, x, cfg):
    p, a = cfg.prod_fmt, cfg.acc_fmt
    po, ao = oracle.Fmt(p.M, p.E, p.b), oracle.Fmt(a.M, a.E, a.b)
    h = [list(map(Fraction, row)) for row in x]
    for j, layer in enumerate(m.layers):
        W, b = layer.weight.astype(np.float64), layer.bias.astype(np.float64)
        out = []
        for row in h:
            vals = []
            for o in range(W.shape[0]):
                s = oracle.dot(row, W[o], po, ao, cfg.chunk_size, cfg.uf_enabled)
                bq = ao.q(b[o], cfg.uf_enabled)
                v = ao.q(oracle.align_add(s, bq, a.M), cfg.uf_enabled)
                vals.append(v if j == len(m.layers) - 1 else max(v, Fraction(0)))
            out.append(vals)
        h = out
    return h


@pytest.mark.parametrize("uf", [True, False])
def test_two_layer_forward_matches_oracle(uf):
    cfg = LBA8.replace(uf_enabled=uf, chunk_size=4, acc_fmt=LBA8.acc_fmt)
    rng = np.random.default_rng(5)
    m = build_mlp([10, 7, 3], rng, cfg)
    for layer in m.layers:
        layer.bias = rng.uniform(-0.5, 0.5, layer.shape[0]).astype(np.float32)
    x = rng.uniform(0, 1, (4, 10))
    got = m.forward(x)
    want = _oracle_forward(m, x, cfg)
    assert [[Fraction(v) for v in row] for row in got] == want


def test_forward_shape_errors():
    m = build_mlp([4, 3, 2], np.random.default_rng(0))
    with pytest.raises(ValueError):
        m.forward(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        MLP([LbaLinear(np.ones((3, 4))), LbaLinear(np.ones((2, 4)))])
    with pytest.raises(ValueError):
        LbaLinear(np.ones((3, 4)), np.zeros(2))


def test_zero_learning_rate_keeps_weights():
    ds = toy()
    m = build_mlp([6, 8, 3], np.random.default_rng(0), LBA8, "recursive_of")
    before = [l.weight.copy() for l in m.layers]
    hist = train(m, ds, TrainSchedule([Stage(3, lr=0.0)]), eval_ds=ds)
    assert len(hist) == 3
    assert all(np.array_equal(a, l.weight) for a, l in zip(before, m.layers))


def test_stage_switch_only_touches_uf_flag():
    ds = toy()
    m = build_mlp([6, 8, 3], np.random.default_rng(0), LBA8)
    before = [l.weight.copy() for l in m.layers]
    sched = TrainSchedule.two_stage(1, 1, lr=0.0)
    hist = train(m, ds, sched)
    assert [r["stage"] for r in hist] == [0, 1]
    assert all(l.fmaq == LBA8 for l in m.layers)
    assert all(np.array_equal(a, l.weight) for a, l in zip(before, m.layers))
    with pytest.raises(ValueError):
        TrainSchedule([])


def test_learns_separable_toy_set():
    ds = generate(SyntheticSpec("linearly-separable", dim=8, classes=2, samples=100, seed=4, margin=0.05))
    m = build_mlp([8, 16, 2], np.random.default_rng(2), WIDE)
    hist = train(m, ds, TrainSchedule([Stage(50, lr=3e-3, shape="constant")]),
                 shuffle_rng=np.random.default_rng(3))
    assert max(r["train_acc"] for r in hist) >= 0.99
    assert evaluate(m, ds)[1] >= 0.99


def test_training_is_reproducible():
    ds = toy(n=64)

    def run():
        m = build_mlp([6, 8, 3], np.random.default_rng(7), LBA8, "immediate_diff",
                      wa=WaQuant(FloatFormat(4, 3, 4, flex=True)))
        h = train(m, ds, TrainSchedule([Stage(2)]), eval_ds=ds, shuffle_rng=np.random.default_rng(1),
                  stochastic_rng=np.random.default_rng(2))
        return h, [l.weight.tobytes() for l in m.layers]

    assert run() == run()


def test_exact_training_matches_float_reference():
    ds = toy(n=48)
    m = build_mlp([6, 5, 3], np.random.default_rng(0))
    ref = [(l.weight.astype(np.float64), l.bias.astype(np.float64)) for l in m.layers]
    train(m, ds, TrainSchedule([Stage(1, lr=1e-2, shape="constant")]), batch_size=48,
          shuffle_rng=np.random.default_rng(0))
    # one full-batch Adam step from the same start, written out directly
    (w1, b1), (w2, b2) = ref
    order = np.random.default_rng(0).permutation(48)
    x, y = ds.x[order], ds.y[order]
    h = np.maximum(x @ w1.T + b1, 0)
    z = h @ w2.T + b2
    _, g = softmax_cross_entropy(z, y)
    gw2, gb2 = g.T @ h, g.sum(0)
    gh = (g @ w2) * (h > 0)
    gw1, gb1 = gh.T @ x, gh.sum(0)
    for layer, (w, b), (gw, gb) in zip(m.layers, ref, [(gw1, gb1), (gw2, gb2)]):
        # first Adam step moves every coordinate by lr * sign(g) (up to eps)
        np.testing.assert_allclose(layer.weight, w - 1e-2 * gw / (np.abs(gw) + 1e-8), rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(layer.bias, b - 1e-2 * gb / (np.abs(gb) + 1e-8), rtol=1e-5, atol=1e-6)


def test_nan_loss_aborts():
    ds = toy(n=32)
    m = build_mlp([6, 4, 3], np.random.default_rng(0))
    m.layers[0].weight[0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="epoch 0"):
        train(m, ds, TrainSchedule([Stage(1)]))


def test_stuck_rate_conventions():
    x = np.random.default_rng(0).uniform(0.1, 1.0, (8, 6))
    m = build_mlp([6, 4, 3], np.random.default_rng(0), LBA8)
    for layer in m.layers:
        layer.weight[:] = 0.0
        layer._wq = None
    assert stuck_underflow_rate(m, x) == 1.0
    m = build_mlp([6, 4, 3], np.random.default_rng(0), WIDE)
    assert stuck_underflow_rate(m, x) == 0.0
    m = build_mlp([6, 4, 3], np.random.default_rng(0), FmaqConfig(FloatFormat(7, 4, 2)))
    r = stuck_underflow_rate(m, x)
    assert 0.0 < r < 1.0
    # exact layers are skipped unless a config is supplied
    plain = build_mlp([6, 4, 3], np.random.default_rng(0))
    assert stuck_underflow_rate(plain, x) == 0.0
    assert 0.0 < stuck_underflow_rate(plain, x, FmaqConfig(FloatFormat(7, 4, 2))) < 1.0


def test_zeroshot_wide_equals_full_precision():
    ds = toy(n=200)
    m = build_mlp([6, 12, 3], np.random.default_rng(0))
    train(m, ds, TrainSchedule([Stage(5)]))
    rows = zeroshot_eval(m, ds, [None, FmaqConfig(FloatFormat(23, 8, 127)), LBA8])
    assert rows[0]["acc"] == rows[1]["acc"] == evaluate(m, ds)[1]
    assert rows[1]["M"] == 23 and rows[2]["b"] == 7


def test_weight_quantization_modes():
    w = np.random.default_rng(0).standard_normal((5, 4)) * 0.1
    layer = LbaLinear(w, None, None, wa=WaQuant(FloatFormat(4, 3, 4, flex=True)))
    layer.refresh_weights()  # no rng: falls back to nearest
    want, _ = quantize_flex(w, FloatFormat(4, 3, 4, flex=True), RoundMode.NEAREST)
    np.testing.assert_array_equal(layer.wq, want)
    layer.refresh_weights(np.random.default_rng(0))
    a = layer.wq.copy()
    layer.refresh_weights(np.random.default_rng(0))
    assert np.array_equal(a, layer.wq)


def test_landscape_zero_radius_and_csv(tmp_path):
    ds = toy(n=60)
    m = build_mlp([6, 8, 3], np.random.default_rng(0), LBA8)
    coords, grids = landscape_probe(m, ds, np.random.default_rng(1), radius=0.0, steps=1)
    loss = evaluate(m, ds)[0]
    assert coords.tolist() == [0.0]
    assert grids["full"][0, 0] == loss
    assert set(grids) == {"full", "no_uf", "no_swamp"}
    write_landscape_csv(tmp_path / "g.csv", coords, grids["full"])
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "alpha,beta,loss"


@pytest.mark.parametrize("cfg", [None, FmaqConfig(FloatFormat(7, 4, 10))])
def test_landscape_symmetric_for_linear_model(cfg):
    # data closed under x -> -x and a zero linear model: L(a, b) == L(-a, -b)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 4))
    y = rng.integers(0, 3, 20)
    ds = Dataset(np.vstack([x, -x]), np.concatenate([y, y]), 3)
    m = MLP([LbaLinear(np.zeros((3, 4)), None, cfg)])
    coords, grids = landscape_probe(m, ds, np.random.default_rng(2), radius=1.0, steps=5, variants=["full"])
    g = grids["full"]
    np.testing.assert_allclose(g, g[::-1, ::-1], rtol=1e-12)  # only summation order differs
    assert g[2, 2] == pytest.approx(np.log(3))
    assert not np.allclose(g, np.log(3))
