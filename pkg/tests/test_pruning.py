from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mannprune.errors import ConfigError, ShapeError
from mannprune.network import NetworkConfig, init_network
from mannprune.numeric import make_rng
from mannprune.pruning import (MaskEvent, PruneConfig, PruneState, apply_masks, compute_masks,
                               is_mask_event, on_step, prune_to, sparsity_at)
from mannprune.training import OptimizerState, TrainConfig, train


@dataclass
class FixedNames(PruneConfig):
    names: tuple = ("W0",)

    def prunable_names(self):
        return self.names


def fake_net(**tensors):
    return SimpleNamespace(params={k: np.asarray(v, dtype=np.float32) for k, v in tensors.items()})


def brute_force_masks(net, s, cfg):
    """Full sort of (|w|, tensor position, flat index) tuples."""
    names = cfg.prunable_names()
    groups = [names] if cfg.scope == "global" else [(n,) for n in names]
    out = {n: np.ones(net.params[n].shape, dtype=bool) for n in names}
    for group in groups:
        entries = [(abs(float(v)), t, i) for t, n in enumerate(group)
                   for i, v in enumerate(net.params[n].ravel())]
        entries.sort()
        for _, t, i in entries[: int(np.floor(s * len(entries)))]:
            out[group[t]].ravel()[i] = False
    return out


def small_net(seed, n_experts=2, h=6):
    cfg = NetworkConfig(d_in=5, d_out=4, gating_indices=[0, 3], h_size=h, n_experts=n_experts,
                        g_hidden=3)
    return init_network(cfg, make_rng(seed))


def test_sparsity_at_boundaries_and_midpoint():
    oc = PruneConfig(target_sparsity=0.9, ramp_end=0.8)
    os_ = PruneConfig(target_sparsity=0.9, schedule="one_shot")
    assert sparsity_at(0, oc) == 0 and sparsity_at(0, os_) == 0
    assert sparsity_at(0.8, oc) == pytest.approx(0.9)
    assert sparsity_at(1, oc) == pytest.approx(0.9)
    assert sparsity_at(0.4, oc) == pytest.approx(0.45)
    assert sparsity_at(0.999, os_) == 0 and sparsity_at(1, os_) == 0.9


def test_sparsity_at_monotone_and_held():
    cfg = PruneConfig(target_sparsity=0.7, ramp_end=0.6)
    vals = [sparsity_at(t, cfg) for t in np.linspace(0, 1, 501)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert all(v == pytest.approx(0.7) for t, v in zip(np.linspace(0, 1, 501), vals) if t >= 0.6)
    with pytest.raises(ValueError):
        sparsity_at(1.1, cfg)


def test_prune_config_validation():
    with pytest.raises(ConfigError):
        PruneConfig(target_sparsity=1.0)
    with pytest.raises(ConfigError):
        PruneConfig(scope="layer")
    with pytest.raises(ConfigError):
        PruneConfig(schedule="gradual")


def test_prunable_names_defaults():
    assert PruneConfig().prunable_names() == ("W0", "W1", "W2", "G0", "G1", "G2")
    assert PruneConfig(include_gating=False).prunable_names() == ("W0", "W1", "W2")
    assert "b1" in PruneConfig(include_biases=True).prunable_names()


def test_global_example_masks_two_smallest():
    net = fake_net(W0=[0.1, -0.5, 0.3, -0.2])
    m = compute_masks(net, 0.5, FixedNames())
    assert m["W0"].tolist() == [False, True, True, False]


def test_zero_sparsity_keeps_everything():
    net = small_net(0)
    assert all(m.all() for m in compute_masks(net, 0.0, PruneConfig()).values())


def test_local_versus_global_scope_example():
    net = fake_net(W0=[10.0, 20.0], W1=[0.1, 0.2])
    loc = compute_masks(net, 0.5, FixedNames(scope="local", names=("W0", "W1")))
    glo = compute_masks(net, 0.5, FixedNames(scope="global", names=("W0", "W1")))
    assert loc["W0"].tolist() == [False, True] and loc["W1"].tolist() == [False, True]
    assert glo["W0"].tolist() == [True, True] and glo["W1"].tolist() == [False, False]


def test_ties_broken_by_tensor_then_index():
    net = fake_net(W0=[1.0, -1.0, 1.0], W1=[-1.0, 1.0])
    m = compute_masks(net, 0.6, FixedNames(names=("W0", "W1")))
    assert m["W0"].tolist() == [False, False, False] and m["W1"].all()


def test_single_tensor_scopes_agree():
    net = fake_net(W0=make_rng(0).standard_normal(50))
    a = compute_masks(net, 0.37, FixedNames(scope="global"))
    b = compute_masks(net, 0.37, FixedNames(scope="local"))
    np.testing.assert_array_equal(a["W0"], b["W0"])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 0.99), st.sampled_from(["global", "local"]),
       st.booleans())
def test_compute_masks_matches_brute_force(seed, s, scope, quantize):
    net = small_net(seed)
    if quantize:  # force many exact ties
        for p in net.params.values():
            p[...] = np.round(p * 4) / 4
    cfg = PruneConfig(scope=scope)
    got, want = compute_masks(net, s, cfg), brute_force_masks(net, s, cfg)
    for n in want:
        np.testing.assert_array_equal(got[n], want[n])


def test_kept_weights_dominate_masked_weights():
    net = small_net(3, n_experts=4, h=16)
    masks = compute_masks(net, 0.6, PruneConfig())
    kept = np.concatenate([np.abs(net.params[n][m]) for n, m in masks.items()])
    gone = np.concatenate([np.abs(net.params[n][~m]) for n, m in masks.items()])
    assert kept.min() >= gone.max()


def test_apply_masks_examples():
    net = small_net(1)
    state = PruneState.for_network(net, PruneConfig())
    before = net.checksum()
    apply_masks(net, state)
    assert net.checksum() == before

    cfg = NetworkConfig(d_in=4, d_out=4, gating_indices=[0], h_size=4, n_experts=1)
    sq = init_network(cfg, make_rng(2))
    st_ = PruneState.for_network(sq, FixedNames(names=("W1",)))
    st_.masks["W1"] = np.eye(4, dtype=bool)[None]
    w = sq.params["W1"][0].copy()
    apply_masks(sq, st_)
    np.testing.assert_array_equal(sq.params["W1"][0], np.diag(np.diag(w)))


def test_apply_masks_resets_moments_and_is_idempotent():
    net = small_net(4)
    state = prune_to(net, 0.3, PruneConfig())
    opt = OptimizerState.zeros_like(net)
    for a in list(opt.m.values()) + list(opt.v.values()):
        a += 1
    apply_masks(net, state, opt)
    snap = net.checksum()
    apply_masks(net, state, opt)
    assert net.checksum() == snap
    for n, m in state.masks.items():
        assert not opt.m[n][~m].any() and not opt.v[n][~m].any()
    assert abs((1 - state.sparsity) - 0.7) <= 1 / state.total


def test_apply_masks_shape_error():
    net = small_net(0)
    state = PruneState.for_network(net, PruneConfig())
    state.masks["W0"] = np.ones((1, 1), dtype=bool)
    with pytest.raises(ShapeError):
        apply_masks(net, state)


def test_mask_event_schedule():
    events = [s for s in range(1, 451) if is_mask_event(s, 450, 100)]
    assert events == [100, 200, 300, 400, 450]


def test_on_step_monotone_and_reaches_target():
    net = small_net(5, n_experts=3, h=12)
    cfg = PruneConfig(target_sparsity=0.9, mask_update_interval=7)
    state = PruneState.for_network(net, cfg)
    total = 60
    prev = {n: m.copy() for n, m in state.masks.items()}
    rng = make_rng(5, 1)
    for step in range(1, total + 1):
        for p in net.params.values():  # simulate updates that would regrow weights
            p += 0.01 * rng.standard_normal(p.shape).astype(p.dtype)
        on_step(state, net, step, total)
        for n, m in state.masks.items():
            assert not (m & ~prev[n]).any()  # masked set only grows
            assert not net.params[n][~m].any()
        prev = {n: m.copy() for n, m in state.masks.items()}
    assert [e.step for e in state.history] == [7 * k for k in range(1, 9)] + [60]
    assert 0.9 - 1 / state.total <= state.sparsity <= 0.9


def test_training_with_zero_target_never_masks():
    net = small_net(6)
    rng = make_rng(6, 2)
    x = rng.standard_normal((40, 5)).astype(np.float32)
    data = SimpleNamespace(x_train=x, y_train=x[:, :4], x_val=x[:4], y_val=x[:4, :4])
    state = PruneState.for_network(net, PruneConfig(target_sparsity=0.0, mask_update_interval=3))
    train(net, data, TrainConfig(epochs=2, batch_size=8), prune=state)
    assert state.n_masked == 0


def test_training_keeps_masked_weights_zero():
    net = small_net(7)
    rng = make_rng(7, 2)
    x = rng.standard_normal((40, 5)).astype(np.float32)
    data = SimpleNamespace(x_train=x, y_train=x[:, :4], x_val=x[:4], y_val=x[:4, :4])
    state = PruneState.for_network(net, PruneConfig(target_sparsity=0.8, mask_update_interval=4))
    checks = []
    train(net, data, TrainConfig(epochs=3, batch_size=8), prune=state,
          hooks=[lambda r: checks.append(all(not net.params[n][~m].any()
                                             for n, m in state.masks.items()))])
    assert all(checks)
    assert 0.8 - 1 / state.total <= state.sparsity <= 0.8


def test_report_json_lists_events():
    net = small_net(8)
    state = prune_to(net, 0.5, PruneConfig())
    rep = state.report()
    assert rep["masked"] == int(0.5 * state.total)
    assert rep["events"] == [{"step": 0, "target": 0.5, "sparsity": state.sparsity}]
    assert set(rep["tensors"]) == set(PruneConfig().prunable_names())
    assert isinstance(state.history[0], MaskEvent)
