import math

import numpy as np
import pytest

from sefun.nncore import (
    BiGRU,
    CNNEncoder,
    Linear,
    ModelFormatError,
    NonFiniteInput,
    ParameterSet,
    ShapeMismatch,
    TrainConfig,
    adam_step,
    clip_gradients,
    cross_entropy,
    finite_difference_check,
    global_norm,
    init_uniform,
    load_model,
    save_model,
    softmax,
)
from sefun.nncore.gradcheck import rel_error
from sefun.nncore.layers import Attention, GRUCell, reverse_index
from sefun.nncore.train import pad_batch, split_holdout

from _gradcases import LAYER_CASES, cnn_case


# --- softmax / cross-entropy ---------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros(4)), [0.25] * 4, atol=1e-15)
    np.testing.assert_allclose(softmax(np.log([1.0, 3.0])), [0.25, 0.75], atol=1e-12)
    p = softmax(np.array([1000.0, 1000.0, -1000.0]))
    assert abs(p.sum() - 1.0) < 1e-9 and abs(p[0] - 0.5) < 1e-12


def test_softmax_rejects_non_finite():
    with pytest.raises(NonFiniteInput):
        softmax(np.array([0.0, np.inf]))
    with pytest.raises(NonFiniteInput):
        softmax(np.array([np.nan, 1.0]))


def test_cross_entropy():
    assert cross_entropy(np.array([[0.0, 1.0, 0.0]]), [1]) == 0.0
    assert cross_entropy(np.array([[0.5, 0.5]]), [0]) == pytest.approx(math.log(2))
    assert math.isfinite(cross_entropy(np.array([[1.0, 0.0]]), [1]))


# --- clipping ------------------------------------------------------------

def test_clip_examples():
    g = {"a": np.array([1.2, 1.6])}  # norm 2
    assert clip_gradients(g, 5.0) is g
    big = {"a": np.array([6.0, 8.0])}  # norm 10
    out = clip_gradients(big, 5.0)
    np.testing.assert_allclose(out["a"], [3.0, 4.0])
    huge = {"a": np.array([1e12, 0.0]), "b": np.array([[0.0]])}
    assert abs(global_norm(clip_gradients(huge, 5.0)) - 5.0) < 1e-9


def test_clip_never_increases_norm():
    rng = np.random.default_rng(3)
    for _ in range(200):
        g = {k: rng.normal(size=rng.integers(1, 5)) * 10 ** rng.uniform(-3, 3) for k in "abc"}
        before = global_norm(g)
        after = global_norm(clip_gradients(g, 5.0))
        assert after <= max(before, 5.0) + 1e-9 and after <= before + 1e-12


# --- Adam ----------------------------------------------------------------

def _ps(value):
    ps = ParameterSet()
    ps.add("w", np.array(value, dtype=np.float64))
    return ps


def test_adam_zero_gradient_unchanged():
    ps = _ps([1.0, -2.0])
    adam_step(ps, {"w": np.zeros(2)}, TrainConfig.desk())
    np.testing.assert_array_equal(ps["w"], [1.0, -2.0])


def test_adam_first_step_magnitude():
    cfg = TrainConfig.desk(learning_rate=0.01)
    for g in (3.0, -1e-3, 250.0):
        ps = _ps([0.5])
        adam_step(ps, {"w": np.array([g])}, cfg)
        assert abs(abs(ps["w"][0] - 0.5) - 0.01) < 1e-6
        assert np.sign(0.5 - ps["w"][0]) == np.sign(g)


def test_adam_two_steps_against_scalar_reference():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    cfg = TrainConfig.desk(learning_rate=lr)
    ps = _ps([1.0])
    w, m, v = 1.0, 0.0, 0.0
    for t in (1, 2):
        g = 2.0 * w  # d/dw of w^2
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        adam_step(ps, {"w": 2.0 * ps["w"].copy()}, cfg)
    assert abs(ps["w"][0] - w) < 1e-15


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step(_ps([1.0, 2.0]), {"w": np.zeros(3)}, TrainConfig.desk())


# --- init ----------------------------------------------------------------

def test_init_uniform():
    a = init_uniform((100000,), 7, "x")
    np.testing.assert_array_equal(a, init_uniform((100000,), 7, "x"))
    assert a.min() >= -0.1 and a.max() <= 0.1
    assert abs(a.mean()) < 0.01
    assert not np.array_equal(a, init_uniform((100000,), 7, "y"))


# --- layers --------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(LAYER_CASES))
@pytest.mark.parametrize("seed", [0, 1])
def test_layer_gradients(name, seed):
    loss, P = LAYER_CASES[name](seed)
    res = finite_difference_check(loss, P, h=1e-5)
    assert res.n_checked > 0
    assert res.max_rel_error < 1e-3, res


def test_linear_gradient_tight():
    loss, P = LAYER_CASES["fully-connected+softmax"](5)
    assert finite_difference_check(loss, P).max_rel_error < 1e-6


def test_gru_cell_gradient():
    rng = np.random.default_rng(0)
    cell = GRUCell("c", {"x": 3, "y": 2}, 4)
    ps = ParameterSet()
    cell.init(ps, 0)
    P = {k: ps[k].copy() for k in ps.names()}
    P["x"], P["y"], P["h"] = rng.normal(size=(2, 3)), rng.normal(size=(2, 2)), rng.normal(size=(2, 4))
    R = rng.normal(size=(2, 4))

    def loss(P):
        G = {}
        xs = {"x": P["x"], "y": P["y"]}
        h, cache = cell.step(P, cell.project(P, xs), P["h"])
        dxp, dh = cell.step_backward(P, G, cache, R)
        dxs = cell.project_backward(P, G, xs, dxp)
        G["x"], G["y"], G["h"] = dxs["x"], dxs["y"], dh
        return float(np.sum(h * R)), G, None

    assert finite_difference_check(loss, P).max_rel_error < 1e-3


def test_cnn_tie_is_excluded():
    layer = CNNEncoder("cnn", 2, 3, widths=(1,))
    ps = ParameterSet()
    layer.init(ps, 0)
    P = {k: ps[k].copy() for k in ps.names()}
    X = np.ones((1, 3, 2))  # identical tokens: every window ties
    mask = np.ones((1, 3))
    vec, cache = layer.forward(P, X, mask)
    assert CNNEncoder.has_tie(cache)
    w = np.tanh(X[0, 0] @ P["cnn.conv1.W"] + P["cnn.conv1.b"])
    np.testing.assert_allclose(vec[0], w)

    def loss(P):
        G = {}
        v, c = layer.forward(P, P["input"], mask)
        G["input"] = layer.backward(P, G, c, np.ones_like(v))
        return float(v.sum()), G, [cc[2] for cc in c[2]]

    P["input"] = X.copy()
    res = finite_difference_check(loss, P, names=["input"])
    assert res.n_excluded > 0


def test_cnn_random_case_has_no_exclusions():
    loss, P = cnn_case(3)
    assert finite_difference_check(loss, P).n_excluded == 0


def test_bigru_symmetry_and_reversal():
    gru = BiGRU("g", 3, 4)
    ps = ParameterSet()
    gru.init(ps, 0)
    P = {k: ps[k].copy() for k in ps.names()}
    for k in list(P):  # tie backward weights to forward ones
        if ".bwd." in k:
            P[k] = P[k.replace(".bwd.", ".fwd.")].copy()
    rng = np.random.default_rng(1)
    x1 = rng.normal(size=(1, 1, 3))
    _, v, _ = gru.forward(P, x1, np.ones((1, 1)))
    np.testing.assert_allclose(v[0, :4], v[0, 4:])
    X = rng.normal(size=(1, 5, 3))
    _, v, _ = gru.forward(P, X, np.ones((1, 5)))
    _, vr, _ = gru.forward(P, X[:, ::-1], np.ones((1, 5)))
    np.testing.assert_allclose(v[0, :4], vr[0, 4:], atol=1e-12)
    np.testing.assert_allclose(v[0, 4:], vr[0, :4], atol=1e-12)


def test_reverse_index_respects_padding():
    mask = np.array([[1, 1, 1, 0], [1, 0, 0, 0]], dtype=float)
    r = reverse_index(mask)
    assert r[0, :3].tolist() == [2, 1, 0] and r[1, 0] == 0


def test_attention_weights():
    att = Attention("a", 3, 2, 4)
    ps = ParameterSet()
    att.init(ps, 0)
    P = {k: ps[k] for k in ps.names()}
    s = np.ones((1, 3))
    one = np.ones((1, 1, 2))
    _, a, _ = att.forward(P, s, one, att.keys(P, one), np.ones((1, 1)))
    assert a[0].tolist() == [1.0]
    same = np.ones((1, 4, 2))
    _, a, _ = att.forward(P, s, same, att.keys(P, same), np.ones((1, 4)))
    np.testing.assert_allclose(a[0], [0.25] * 4)


def test_rel_error_floor():
    assert rel_error(0.0, 0.0) == 0.0
    assert rel_error(1e-12, 2e-12) < 1e-5


# --- model files ---------------------------------------------------------

def test_model_file_round_trip(tmp_path):
    params = {"b": np.arange(6.0).reshape(2, 3), "a": np.array([0.1, -0.2])}
    save_model(tmp_path / "m", "toy", {"x": 1}, params)
    save_model(tmp_path / "m2", "toy", {"x": 1}, dict(reversed(list(params.items()))))
    assert (tmp_path / "m").read_bytes() == (tmp_path / "m2").read_bytes()
    kind, meta, loaded = load_model(tmp_path / "m", "toy")
    assert kind == "toy" and meta == {"x": 1}
    for k in params:
        np.testing.assert_array_equal(loaded[k], params[k])
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "m", "other")
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "bad")


# --- training helpers ----------------------------------------------------

def test_pad_and_split():
    ids, mask = pad_batch([[5, 6], [7]])
    assert ids.tolist() == [[5, 6], [7, 0]] and mask.tolist() == [[1, 1], [1, 0]]
    tr, va = split_holdout(100, 0.1, 3)
    assert len(va) == 10 and not set(tr) & set(va)
    assert np.array_equal(va, split_holdout(100, 0.1, 3)[1])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(hidden_dim=0)
    cfg = TrainConfig.desk(hidden_dim=8)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    full = TrainConfig()
    assert (full.hidden_dim, full.batch_size, full.learning_rate, full.clip) == (1024, 128, 1e-4, 5.0)


def test_linear_shapes():
    lin = Linear("l", 3, 2)
    ps = ParameterSet()
    lin.init(ps, 0)
    y, _ = lin.forward({k: ps[k] for k in ps.names()}, np.ones((4, 3)))
    assert y.shape == (4, 2)
