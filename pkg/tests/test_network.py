import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mannprune.data import SkeletonSchema
from mannprune.errors import ConfigError, ShapeError
from mannprune.network import (PARAM_ORDER, NetworkConfig, blend, init_network,
                               predict_with_blended)
from mannprune.numeric import make_rng


def reference_forward(params, cfg, x):
    """Independent float64 forward pass: explicit loops, explicit blend."""
    p = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    x = np.asarray(x, dtype=np.float64)

    def elu(v):
        return np.array([a if a > 0 else math.exp(a) - 1 for a in v])

    g = x[cfg.gating_indices]
    g = elu(p["G0"] @ g + p["c0"])
    g = elu(p["G1"] @ g + p["c1"])
    logits = p["G2"] @ g + p["c2"]
    e = [math.exp(v - max(logits)) for v in logits]
    omega = np.array(e) / sum(e)
    blended = {}
    for name in ("W0", "W1", "W2", "b0", "b1", "b2"):
        acc = np.zeros(p[name].shape[1:])
        for k in range(cfg.n_experts):
            acc = acc + omega[k] * p[name][k]
        blended[name] = acc
    h = elu(blended["W0"] @ x + blended["b0"])
    h = elu(blended["W1"] @ h + blended["b1"])
    return blended["W2"] @ h + blended["b2"], omega


def test_config_validation_lists_fields():
    with pytest.raises(ConfigError, match="n_experts.*h_size|h_size.*n_experts"):
        NetworkConfig(d_in=4, d_out=2, gating_indices=[0], h_size=0, n_experts=0)
    with pytest.raises(ConfigError, match="gating_indices"):
        NetworkConfig(d_in=4, d_out=2, gating_indices=[4])
    with pytest.raises(ConfigError, match="dropout_retention"):
        NetworkConfig(d_in=4, d_out=2, gating_indices=[0], dropout_retention=0.0)


def test_init_deterministic():
    cfg = NetworkConfig(d_in=4, d_out=2, gating_indices=[0, 1], h_size=8, n_experts=2)
    a, b = init_network(cfg, make_rng(1)), init_network(cfg, make_rng(1))
    for name in PARAM_ORDER:
        assert a.params[name].tobytes() == b.params[name].tobytes()
    assert a.checksum() == b.checksum()


def test_init_glorot_bounds_and_zero_bias():
    cfg = NetworkConfig(d_in=10, d_out=6, gating_indices=[0, 1, 2], h_size=16, n_experts=3)
    net = init_network(cfg, make_rng(2))
    for name in ("W0", "W1", "W2", "G0", "G1", "G2"):
        w = net.params[name]
        bound = math.sqrt(6 / (w.shape[-1] + w.shape[-2]))
        assert np.abs(w).max() <= bound and np.abs(w).max() > 0.8 * bound
        assert w.dtype == np.float32
    for name in ("b0", "b1", "b2", "c0", "c1", "c2"):
        assert not net.params[name].any()


def test_single_expert_bank():
    cfg = NetworkConfig(d_in=3, d_out=2, gating_indices=[0], h_size=4, n_experts=1)
    net = init_network(cfg, make_rng(0))
    assert net.params["W0"].shape[0] == 1
    np.testing.assert_array_equal(net.gate(np.ones(3)), [1.0])
    b = net.blend(np.array([1.0]))
    np.testing.assert_array_equal(b["W1"], net.params["W1"][0])


def test_dog_scale_param_count_matches_reference_size():
    s = SkeletonSchema.dog_scale()
    cfg = NetworkConfig(s.d_in, s.d_out, s.gating_columns)
    assert abs(cfg.param_count() - 5.5625e6) / 5.5625e6 < 0.02


@pytest.mark.parametrize("seed", range(20))
def test_param_count_formula_matches_enumeration(seed):
    rng = make_rng(seed, 3)
    d_in = int(rng.integers(2, 30))
    cfg = NetworkConfig(d_in=d_in, d_out=int(rng.integers(1, 30)),
                        gating_indices=sorted(rng.choice(d_in, size=int(rng.integers(1, d_in)),
                                                         replace=False).tolist()),
                        h_size=int(rng.integers(1, 40)), n_experts=int(rng.integers(1, 9)),
                        g_hidden=int(rng.integers(1, 12)))
    net = init_network(cfg, make_rng(seed))
    assert cfg.param_count() == sum(a.size for a in net.params.values())


def test_gate_zero_weights_is_uniform(tiny_net):
    for n in ("G0", "G1", "G2", "c0", "c1", "c2"):
        tiny_net.params[n][...] = 0
    np.testing.assert_allclose(tiny_net.gate(np.arange(5.0)), [1 / 3] * 3, atol=1e-7)


def test_gate_shape_error(tiny_net):
    with pytest.raises(ShapeError):
        tiny_net.gate(np.ones(4))


def test_gate_and_predict_match_f64_reference(tiny_net, tiny_config):
    x = make_rng(9).standard_normal(5).astype(np.float32)
    want_y, want_omega = reference_forward(tiny_net.params, tiny_config, x)
    np.testing.assert_allclose(tiny_net.gate(x), want_omega, atol=1e-5)
    np.testing.assert_allclose(tiny_net.predict(x), want_y, atol=1e-5)


def test_blend_one_hot(tiny_net):
    b = tiny_net.blend(np.array([0.0, 1.0, 0.0]))
    for name in ("W0", "W1", "W2", "b0", "b1", "b2"):
        np.testing.assert_array_equal(b[name], tiny_net.params[name][1])


def test_blend_identical_experts_fixed_point(tiny_net):
    for name in ("W0", "W1", "W2"):
        tiny_net.params[name][:] = tiny_net.params[name][0]
    b = tiny_net.blend(np.array([0.2, 0.5, 0.3]))
    np.testing.assert_allclose(b["W1"], tiny_net.params["W1"][0], atol=1e-6)


def test_blend_scalar_toy():
    params = {n: np.array([[[1.0]], [[3.0]]]) for n in ("W0", "W1", "W2")}
    params.update({n: np.array([[1.0], [3.0]]) for n in ("b0", "b1", "b2")})
    out = blend(params, np.array([0.25, 0.75]))
    assert out["W0"].item() == pytest.approx(2.5)
    assert out["b2"].item() == pytest.approx(2.5)


def test_blend_length_error(tiny_net):
    with pytest.raises(ShapeError):
        tiny_net.blend(np.ones(2) / 2)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.integers(0, 1000))
def test_blend_linearity(a, seed):
    cfg = NetworkConfig(d_in=4, d_out=3, gating_indices=[0], h_size=5, n_experts=4)
    net = init_network(cfg, make_rng(7))
    rng = make_rng(seed)
    w1, w2 = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
    mixed = net.blend(a * w1 + (1 - a) * w2)
    b1, b2 = net.blend(w1), net.blend(w2)
    for name in mixed:
        np.testing.assert_allclose(mixed[name], a * b1[name] + (1 - a) * b2[name], atol=1e-6)


def test_predict_zero_net_outputs_zero(tiny_net):
    for p in tiny_net.params.values():
        p[...] = 0
    assert not tiny_net.predict(make_rng(0).standard_normal(5)).any()


def test_predict_identity_toy_passes_positive_input():
    cfg = NetworkConfig(d_in=3, d_out=3, gating_indices=[0], h_size=3, n_experts=1)
    net = init_network(cfg, make_rng(0))
    for n in ("W0", "W1", "W2"):
        net.params[n][0] = np.eye(3)
    x = np.array([0.5, 1.0, 2.0], dtype=np.float32)
    np.testing.assert_allclose(net.predict(x), x, atol=1e-7)


def test_predict_matches_blended_path(tiny_net):
    x = make_rng(4).standard_normal(5).astype(np.float32)
    y = predict_with_blended(tiny_net.blend(tiny_net.gate(x)), x)
    np.testing.assert_allclose(tiny_net.predict(x), y, atol=1e-5)


def test_eval_predict_is_pure(tiny_net):
    x = make_rng(5).standard_normal((4, 5))
    assert tiny_net.predict(x).tobytes() == tiny_net.predict(x).tobytes()


def test_train_mode_dropout_scales_and_is_seeded(tiny_config):
    cfg = NetworkConfig(**{**tiny_config.to_dict(), "dropout_retention": 0.5})
    net = init_network(cfg, make_rng(0))
    x = np.ones((3, 5))
    a = net.predict(x, "train", make_rng(1))
    b = net.predict(x, "train", make_rng(1))
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, net.predict(x, "eval"))
    with pytest.raises(ValueError):
        net.predict(x, "train")


@settings(max_examples=25, deadline=None)
@given(st.permutations(range(3)), st.integers(0, 100))
def test_gate_sums_to_one_and_expert_permutation_invariance(perm, seed):
    cfg = NetworkConfig(d_in=5, d_out=4, gating_indices=[0, 2, 4], h_size=6, n_experts=3,
                        g_hidden=5)
    net = init_network(cfg, make_rng(seed))
    x = make_rng(seed, 1).standard_normal(5) * 3
    assert abs(net.gate(x).sum() - 1) <= 1e-6
    perm = list(perm)
    other = net.copy()
    for n in ("W0", "W1", "W2", "b0", "b1", "b2", "G2", "c2"):
        other.params[n] = net.params[n][perm].copy()
    np.testing.assert_allclose(other.predict(x), net.predict(x), atol=1e-6)
