import math

import numpy as np
import pytest

from navigscene.errors import DimMismatch, ValidationError
from navigscene.fusion import (
    MlpWeights,
    TaskHead,
    forward_conventional,
    forward_navigated,
    fuse,
    grad_check,
    identity_first_block,
    init_mlp,
    mlp,
    navigated_loss,
    navigated_loss_grads,
    random_instance,
    reduce,
    zero_mlp,
)
from navigscene.gradcheck import max_relative_error


def py_mlp(x, w):
    # list-based reference: W2 relu(W1 x + b1) + b2
    W1, b1, W2, b2 = (a.tolist() for a in w.params())
    h = [max(0.0, math.fsum(r * v for r, v in zip(row, x)) + b) for row, b in zip(W1, b1)]
    return [math.fsum(r * v for r, v in zip(row, h)) + b for row, b in zip(W2, b2)]


def py_navigated(inst):
    red = py_mlp(inst.vlm_dist.tolist(), inst.phi_red)
    fused = py_mlp(inst.bev.tolist() + red, inst.phi_fus)
    return py_mlp(fused, inst.head.weights)


def test_zero_mlp_gives_zero():
    assert not mlp(np.arange(5.0), zero_mlp(5, 3)).any()


def test_dim_mismatch():
    with pytest.raises(DimMismatch):
        mlp(np.ones(8), init_mlp(16, 4, 0))
    with pytest.raises(DimMismatch):
        fuse(np.ones(8), np.ones(4), init_mlp(16, 8, 0))
    with pytest.raises(DimMismatch):
        reduce(np.ones(10), init_mlp(12, 4, 0))


def test_invalid_weights():
    with pytest.raises(ValidationError):
        MlpWeights(np.ones((3, 4)), np.ones(2), np.ones((2, 3)), np.ones(2))
    with pytest.raises(ValidationError):
        init_mlp(0, 3, 0)
    with pytest.raises(ValidationError):
        TaskHead("steering", init_mlp(4, 4, 0))


def test_identity_fusion_returns_bev():
    rng = np.random.default_rng(0)
    bev, red = rng.standard_normal(8), rng.standard_normal(8)
    assert np.array_equal(fuse(bev, red, identity_first_block(8)), bev)


def test_identity_head_returns_bev():
    bev = np.random.default_rng(1).standard_normal(6)
    head = TaskHead("perception", identity_first_block(6, 6))
    assert np.array_equal(forward_conventional(bev, head), bev)


def test_zero_head():
    head = TaskHead("prediction", zero_mlp(6, 3))
    assert not forward_conventional(np.ones(6), head).any()


def test_mlp_matches_reference():
    rng = np.random.default_rng(3)
    w = init_mlp(8, 8, 4)
    x = rng.standard_normal(8)
    assert np.allclose(mlp(x, w), py_mlp(x.tolist(), w), atol=1e-12, rtol=0)
    bev, red = rng.standard_normal(8), rng.standard_normal(8)
    phi = init_mlp(16, 8, 5)
    assert np.allclose(fuse(bev, red, phi), py_mlp(bev.tolist() + red.tolist(), phi), atol=1e-12, rtol=0)


def test_head_matches_reference():
    bev = np.random.default_rng(6).standard_normal(8)
    head = TaskHead("planning", init_mlp(8, 3, 7))
    assert np.allclose(forward_conventional(bev, head), py_mlp(bev.tolist(), head.weights), atol=1e-12, rtol=0)


@pytest.mark.parametrize("seed", range(3))
def test_navigated_matches_reference(seed):
    inst = random_instance(64, 8, seed)
    out = forward_navigated(inst.bev, inst.vlm_dist, inst.phi_red, inst.phi_fus, inst.head)
    assert np.allclose(out, py_navigated(inst), atol=1e-12, rtol=0)


@pytest.mark.parametrize("seed", range(5))
def test_identity_fusion_degenerates_to_conventional(seed):
    inst = random_instance(64, 8, seed)
    o_nav = forward_navigated(inst.bev, inst.vlm_dist, inst.phi_red, identity_first_block(8), inst.head)
    o_con = forward_conventional(inst.bev, inst.head)
    assert np.array_equal(o_nav, o_con)


def test_zero_vlm_output_equals_fusing_zero():
    inst = random_instance(16, 4, 2)
    phi_red = inst.phi_red.copy()
    phi_red.b1[:] = 0
    phi_red.b2[:] = 0
    out = forward_navigated(inst.bev, np.zeros(16), phi_red, inst.phi_fus, inst.head)
    expected = forward_conventional(fuse(inst.bev, np.zeros(4), inst.phi_fus), inst.head)
    assert np.array_equal(out, expected)


def test_simplex_check():
    inst = random_instance(16, 4, 0)
    with pytest.raises(ValidationError):
        reduce(np.full(16, 0.5), inst.phi_red, check_simplex=True)
    reduce(inst.vlm_dist, inst.phi_red, check_simplex=True)


@pytest.mark.parametrize("seed", range(5))
def test_grad_check(seed):
    inst = random_instance(64, 8, seed)
    assert grad_check(inst.bev, inst.vlm_dist, inst.phi_red, inst.phi_fus, inst.head) < 1e-4


def test_backprop_against_reference_differences():
    inst = random_instance(12, 4, 9)
    grads = navigated_loss_grads(inst.bev, inst.vlm_dist, inst.phi_red, inst.phi_fus, inst.head)

    def ref_loss():
        return math.fsum(v * v for v in py_navigated(inst))

    h = 1e-5
    for name, w in (("phi_red", inst.phi_red), ("phi_fus", inst.phi_fus), ("head", inst.head.weights)):
        for param, analytic in zip(w.params(), grads[name]):
            numeric = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                keep = param[idx]
                param[idx] = keep + h
                up = ref_loss()
                param[idx] = keep - h
                down = ref_loss()
                param[idx] = keep
                numeric[idx] = (up - down) / (2 * h)
            assert max_relative_error(analytic, numeric, 1e-5 * max(1.0, ref_loss())) < 1e-4


def test_dead_network_gradient_only_on_final_bias():
    bev_dim, vocab = 4, 6
    head = TaskHead("planning", zero_mlp(bev_dim, 3))
    head.weights.b2[:] = [0.5, -1.0, 2.0]
    grads = navigated_loss_grads(np.zeros(bev_dim), np.zeros(vocab), zero_mlp(vocab, bev_dim), zero_mlp(2 * bev_dim, bev_dim), head)
    for name in ("phi_red", "phi_fus"):
        assert all(not g.any() for g in grads[name])
    dW1, db1, dW2, db2 = grads["head"]
    assert not dW1.any() and not db1.any() and not dW2.any()
    assert np.array_equal(db2, 2 * head.weights.b2)


def test_loss_value():
    inst = random_instance(16, 4, 1)
    o = forward_navigated(inst.bev, inst.vlm_dist, inst.phi_red, inst.phi_fus, inst.head)
    assert navigated_loss(inst.bev, inst.vlm_dist, inst.phi_red, inst.phi_fus, inst.head) == pytest.approx(float(o @ o))


def test_random_instance_validation():
    with pytest.raises(ValidationError):
        random_instance(64, 0)


def test_weights_round_trip(tmp_path):
    w = init_mlp(5, 3, 1, hidden_dim=7)
    w.save(tmp_path / "w.json")
    back = MlpWeights.load(tmp_path / "w.json")
    assert all(np.array_equal(a, b) for a, b in zip(back.params(), w.params()))
    assert (back.in_dim, back.hidden_dim, back.out_dim) == (5, 7, 3)
