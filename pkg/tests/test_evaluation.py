import math

import numpy as np
import pytest

from mannprune.data import GAIT_PRESETS, GaitSpec, SkeletonSchema, build_dataset, generate_gait
from mannprune.errors import ConfigError, NumericError
from mannprune.evaluation import (ComparisonProtocol, bench_inference, bench_matrix,
                                  compare_equal_params, cost_report, count_nonzero,
                                  foot_skate, foot_skate_arrays, matched_sparsity, rows_to_csv,
                                  skating_values, to_json)
from mannprune.network import NetworkConfig, init_network
from mannprune.numeric import make_rng
from mannprune.pruning import PruneConfig, prune_to
from mannprune.training import TrainConfig


def test_skate_full_contact():
    assert skating_values(0.0, 10.0, 2.5) == pytest.approx(10.0)


def test_skate_half_threshold():
    assert skating_values(1.25, 4.0, 2.5) == pytest.approx(4 * (2 - math.sqrt(2)), abs=1e-6)
    assert float(skating_values(1.25, 4.0, 2.5)) == pytest.approx(2.3431, abs=1e-4)


def test_skate_boundary_is_not_contact():
    rep = foot_skate_arrays(np.full((5, 4), 2.5), np.full((5, 4), 3.0))
    assert rep.mean == 0 and rep.contact_frames == [0, 0, 0, 0]


def test_skate_per_leg_mean_over_contact_frames():
    h = np.array([[0.0, 9.0], [0.0, 0.0], [9.0, 0.0]])
    v = np.array([[2.0, 5.0], [4.0, 1.0], [7.0, 3.0]])
    rep = foot_skate_arrays(h, v, 2.5)
    assert rep.per_leg == [3.0, 2.0]
    assert rep.mean == 2.5
    assert rep.contact_frames == [2, 2] and rep.total_frames == 3


@pytest.mark.parametrize("c", [0.0, 0.5, 3.0])
def test_skate_homogeneous_in_speed(c):
    rng = make_rng(1)
    h = rng.uniform(0, 4, (50, 4))
    v = rng.uniform(0, 2, (50, 4))
    a, b = foot_skate_arrays(h, v), foot_skate_arrays(h, c * v)
    np.testing.assert_allclose(b.per_leg, c * np.array(a.per_leg), rtol=1e-12)


def test_skate_rejects_nonpositive_threshold():
    with pytest.raises(ConfigError):
        foot_skate_arrays(np.zeros((2, 4)), np.zeros((2, 4)), 0.0)


@pytest.mark.parametrize("gait", sorted(GAIT_PRESETS))
def test_ground_truth_clips_do_not_skate(schema, gait):
    clip = generate_gait(GaitSpec.preset(gait, duration=4), schema)
    assert foot_skate(clip).mean < 0.02


def test_skating_rows_export(schema):
    rep = foot_skate(generate_gait(GaitSpec.preset("walk", duration=1), schema))
    rows = rep.to_rows(schema.feet)
    assert [r["leg"] for r in rows] == schema.feet + ["all"]
    assert rows_to_csv(rows).splitlines()[0] == "leg,skating_cm_per_frame,contact_frames"


def test_cost_fresh_network(tiny_net):
    c = cost_report(tiny_net)
    assert c.sparsity == 0 and c.nonzero_params == c.total_params == tiny_net.param_count()
    assert c.size_bits == 32 * c.total_params
    assert c.size_mb == c.size_bits / 1e6


def test_cost_matches_independent_nonzero_count(tiny_net):
    state = prune_to(tiny_net, 0.4, PruneConfig())
    c = cost_report(tiny_net, state)
    assert c.size_bits // 32 == count_nonzero(tiny_net)


def test_cost_prunable_part_scales_exactly():
    cfg = NetworkConfig(d_in=30, d_out=20, gating_indices=list(range(6)), h_size=40,
                        n_experts=4, g_hidden=8)
    dense = cost_report(init_network(cfg, make_rng(0)))
    for s in (0.1, 0.5, 0.9):
        net = init_network(cfg, make_rng(0))
        state = prune_to(net, s, PruneConfig())
        c = cost_report(net, state)
        kept = c.prunable_params - math.floor(s * c.prunable_params)
        assert c.prunable_nonzero == kept
        assert c.mflops == pytest.approx(dense.mflops_fixed + dense.mflops_prunable * kept
                                         / c.prunable_params, rel=1e-12)
        assert c.mflops_fixed == dense.mflops_fixed > 0


def test_cost_dog_scale_reference_point():
    s = SkeletonSchema.dog_scale()
    net = init_network(NetworkConfig(s.d_in, s.d_out, s.gating_columns), make_rng(0))
    c = cost_report(net)
    assert abs(c.size_mb - 178) / 178 < 0.03
    assert abs(c.mflops - 11.10) / 11.10 < 0.03


def test_bench_matrix_agreement_and_timing():
    m = make_rng(0).standard_normal((64, 48)).astype(np.float32)
    m[make_rng(1).random(m.shape) < 0.9] = 0
    t = bench_matrix("m", m, reps=100)
    assert t.dense_s > 0 and t.csr_s > 0
    assert t.speedup == pytest.approx(t.dense_s / t.csr_s)
    assert t.max_abs_diff <= 1e-5
    assert t.nnz == np.count_nonzero(m)


def test_bench_matrix_empty_matrix():
    t = bench_matrix("zeros", np.zeros((16, 16), dtype=np.float32), reps=100)
    assert t.nnz == 0 and t.sparsity == 1.0 and t.csr_s > 0


def test_bench_matrix_rejects_few_reps():
    with pytest.raises(ValueError):
        bench_matrix("m", np.eye(3), reps=10)


def test_bench_matrix_mismatch_raises(monkeypatch):
    from mannprune import numeric

    class Broken:
        def __init__(self, csr):
            self.__dict__.update(csr.__dict__)

        def matvec(self, x):
            return np.ones(3, dtype=np.float32) * 99

    real = numeric.csr_from_dense
    monkeypatch.setattr("mannprune.evaluation.csr_from_dense", lambda m: Broken(real(m)))
    with pytest.raises(NumericError):
        bench_matrix("m", np.eye(3, dtype=np.float32), reps=100)


def test_bench_inference_rows(tiny_net):
    rep = bench_inference(tiny_net, [0.0, 0.9], reps=100)
    assert len(rep.layers) == 6
    assert rep.backend in ("cython", "python")
    assert all(t.max_abs_diff <= 1e-5 for t in rep.layers)
    assert rep.layers[0].nnz == tiny_net.params["W0"][0].size
    assert "shape" in rep.to_rows()[0]


def test_matched_sparsity_keeps_topology():
    large = NetworkConfig(d_in=20, d_out=10, gating_indices=[0, 1], h_size=64, n_experts=4)
    small = NetworkConfig(d_in=20, d_out=10, gating_indices=[0, 1], h_size=16, n_experts=4)
    s = matched_sparsity(large, small, PruneConfig())
    net = init_network(large, make_rng(0))
    state = prune_to(net, s, PruneConfig())
    c = cost_report(net, state)
    assert net.params["W1"].shape == (4, 64, 64)
    assert abs(c.nonzero_params - small.param_count()) <= 0.02 * small.param_count()


def test_matched_sparsity_impossible_pair():
    large = NetworkConfig(d_in=20, d_out=10, gating_indices=[0], h_size=8, n_experts=2)
    small = NetworkConfig(d_in=20, d_out=10, gating_indices=[0], h_size=64, n_experts=2)
    with pytest.raises(ConfigError):
        matched_sparsity(large, small, PruneConfig())


def test_protocol_tolerance_rejects_before_training():
    large = NetworkConfig(d_in=20, d_out=10, gating_indices=[0], h_size=32, n_experts=2)
    proto = ComparisonProtocol([8], large, TrainConfig(epochs=1), PruneConfig(), tolerance=-1)
    with pytest.raises(ConfigError):
        compare_equal_params(proto, None, [])


def test_empty_protocol_gives_empty_table():
    large = NetworkConfig(d_in=20, d_out=10, gating_indices=[0], h_size=32, n_experts=2)
    proto = ComparisonProtocol([], large, TrainConfig(epochs=1), PruneConfig())
    assert compare_equal_params(proto, None, []) == []


def test_compare_equal_params_end_to_end(schema):
    clips = [generate_gait(GaitSpec.preset(g, duration=1.5), schema) for g in ("walk", "trot")]
    ds = build_dataset(clips)
    large = NetworkConfig(schema.d_in, schema.d_out, schema.gating_columns, h_size=32,
                          n_experts=2, g_hidden=8)
    proto = ComparisonProtocol([16, 8], large, TrainConfig(epochs=1, learning_rate=1e-3),
                               PruneConfig(mask_update_interval=5))
    rows = compare_equal_params(proto, ds, clips[:1], warn_on_order=False)
    assert len(rows) == 4
    assert [r["kind"] for r in rows] == ["dense", "sparse"] * 2
    assert all(r["h_size"] == 32 for r in rows if r["kind"] == "sparse")
    for dense, sparse in zip(rows[::2], rows[1::2]):
        assert abs(sparse["nonzero"] - dense["nonzero"]) <= 0.02 * dense["nonzero"]
    assert all(math.isfinite(r["val_mse"]) for r in rows)
    assert to_json(rows).startswith("[")



def test_negative_predicted_speed_counts_by_magnitude():
    rep = foot_skate_arrays(np.zeros((2, 1)), np.array([[-3.0], [3.0]]))
    assert rep.mean == pytest.approx(3.0)
