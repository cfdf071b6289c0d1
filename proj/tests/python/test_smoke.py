import math

import numpy as np
import pytest

import utr


def test_compute_rtg():
    assert utr.compute_rtg([1.0, 2.0, 3.0]) == [6.0, 5.0, 3.0]
    assert utr.compute_rtg([0.0, 0.0, 1.0]) == [1.0, 1.0, 1.0]


def test_shift_actions():
    actions = np.array([[1.0], [2.0], [3.0]])
    shifted = utr.shift_actions(actions)
    assert shifted.shape == (3, 1)
    assert shifted[0, 0] == 0.0
    assert shifted[1, 0] == 1.0
    assert shifted[2, 0] == 2.0


def test_trace_and_ratio_bounds():
    assert utr.trace_bound_merged(1.0, 1.0, 0.5) == 1.0
    assert utr.trace_bound_separated(1.0, 0.3, 0.5) == 3.0
    assert utr.rademacher_ratio_bound(0.0, 1.0 / 3.0) == 1.0 / 3.0
    assert utr.rademacher_ratio_bound(1.0, 0.5) == pytest.approx(1.0 / math.sqrt(3.0), abs=1e-12)


def test_generalization_bound():
    v = utr.generalization_bound(0.1, 0.05, 100, 0.1)
    assert v == pytest.approx(0.2 + 4.0 * math.sqrt(2.0 * math.log(40.0) / 100.0), abs=1e-12)


def test_empirical_rademacher():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((500, 3))
    value, stderr = utr.empirical_rademacher_linear(data, norm_budget=1.0, draws=200, seed=1)
    assert value == pytest.approx(math.sqrt(3.0 / 500.0), rel=0.25)
    assert stderr > 0.0


def test_flops_ratio_is_nine():
    dt = utr.count_flops("dt", context_len=16)
    udt = utr.count_flops("udt", context_len=16)
    assert dt["attn_scores"] / udt["attn_scores"] == 9.0
    assert udt["total"] < dt["total"]


def test_policy_forward_shapes_and_causality():
    policy = utr.Policy("udc", context_len=6, embed_dim=16, depth=1, state_dim=3,
                        action_dim=2, t_max=8, seed=4)
    rng = np.random.default_rng(1)
    rtg = rng.standard_normal((6, 1))
    states = rng.standard_normal((6, 3))
    actions = rng.standard_normal((6, 2))
    ts = list(range(6))
    base = policy.forward(rtg, states, actions, ts)
    assert base.shape == (6, 2)

    # perturbing the future leaves earlier predictions untouched
    states2 = states.copy()
    states2[4:] += 1.0
    perturbed = policy.forward(rtg, states2, actions, ts)
    np.testing.assert_array_equal(base[:4], perturbed[:4])


def test_policy_checkpoint_roundtrip(tmp_path):
    policy = utr.Policy("udt", context_len=4, embed_dim=16, depth=1, state_dim=2,
                        action_dim=2, t_max=8, seed=9)
    path = str(tmp_path / "policy.ckpt")
    policy.save(path)
    loaded = utr.Policy.load(path)
    assert loaded.count_params() == policy.count_params()
    assert loaded.kind() == "udt"
