import math

from hypothesis import given, strategies as st
import numpy as np
import pytest

from larc import tensor as T
from larc.contrastive import (
    AdaptiveTemperature,
    ContrastiveSchedule,
    ProjectionHead,
    adaptive_tau,
    cosine_sim,
    project,
    schedule_lambda,
    supcon_loss,
)
from larc.model import LarcModel
from larc.audit import tiny_config
from larc.tensor import Tensor, finite_differences, precision

from oracles import cosine, naive_supcon

seeds = st.integers(0, 2**31)


def _random_batch(r, b=None, k=None, dim=8):
    b = b or int(r.integers(2, 17))
    k = k or int(r.integers(2, 6))
    y = r.integers(0, k, size=b)
    return r.normal(size=(b, dim)), y, r.uniform(0.05, 0.055, size=b)


def _loss64(c, y, tau):
    with precision(np.float64):
        return supcon_loss(Tensor(c), y, Tensor(tau)).item()


# -- projection head ----------------------------------------------------------
def test_projection_of_zero_is_zero(rng):
    head = ProjectionHead(6, 10, 4, rng)
    np.testing.assert_array_equal(project(Tensor(np.zeros((2, 6))), head).data, 0.0)


def test_projection_with_identity_blocks(rng):
    head = ProjectionHead(4, 4, 3, rng)
    head.w1.data = np.eye(4, dtype=np.float32)
    head.w2.data = np.eye(3, 4, dtype=np.float32)
    z = rng.uniform(0.1, 2.0, size=(2, 4))
    out = project(Tensor(z), head).data
    np.testing.assert_allclose(out, T.gelu(Tensor(z[:, :3])).data, rtol=1e-6)


def test_projection_and_supcon_gradients(rng):
    with precision(np.float64):
        head = ProjectionHead(6, 10, 4, rng)
        for p in head.parameters():
            p.data = rng.normal(0, 0.5, size=p.shape)
        z = Tensor(rng.normal(size=(6, 6)), requires_grad=True)
        y = np.array([0, 0, 1, 1, 2, 0])
        tau = Tensor(np.full(6, 0.0525))
        params = [z] + head.parameters()
        tapes, fds = finite_differences(lambda: supcon_loss(project(z, head), y, tau), params, 1e-5)
    for g, f in zip(tapes, fds):
        np.testing.assert_allclose(g, f, rtol=1e-3, atol=1e-7)


# -- cosine -----------------------------------------------------------------------
def test_cosine_example():
    assert abs(cosine_sim([1, 2], [2, 1]) - 0.8) < 1e-12


def test_cosine_of_zero_vector_is_zero():
    assert cosine_sim([0, 0], [1, 2]) == 0.0


@given(seed=seeds)
def test_cosine_bounds(seed):
    r = np.random.default_rng(seed)
    u, v = r.normal(size=5), r.normal(size=5)
    s = cosine_sim(u, v)
    assert -1.0 - 1e-12 <= s <= 1.0 + 1e-12
    assert abs(s - cosine(u, v)) < 1e-12


# -- temperature ----------------------------------------------------------------
def _temp(dim=4, bias=0.0, rng=None):
    at = AdaptiveTemperature(dim, rng or np.random.default_rng(0))
    at.weight.data[:] = 0.0
    at.bias.data[:] = bias
    return at


def test_tau_midpoint():
    tau = adaptive_tau(Tensor(np.ones((3, 4))), _temp()).data
    np.testing.assert_allclose(tau, 0.0525, rtol=1e-6)


def test_tau_limits_are_open():
    lo = adaptive_tau(Tensor(np.ones((1, 4))), _temp(bias=-1e4)).data[0]
    hi = adaptive_tau(Tensor(np.ones((1, 4))), _temp(bias=1e4)).data[0]
    assert 0.05 < lo < 0.05 + 1e-6
    assert 0.055 - 1e-6 < hi < 0.055


def test_sigma_net_receives_gradient(rng):
    at = AdaptiveTemperature(4, rng)
    z = Tensor(rng.normal(size=(4, 4)))
    c = Tensor(rng.normal(size=(4, 3)))
    supcon_loss(c, [0, 0, 1, 1], at(z)).backward()
    assert np.abs(at.weight.grad).max() > 0 and np.abs(at.bias.grad).max() > 0


@given(seed=seeds, scale=st.floats(0.0, 1e3))
def test_tau_always_inside_band(seed, scale):
    r = np.random.default_rng(seed)
    at = AdaptiveTemperature(8, r)
    at.weight.data = (r.normal(size=(1, 8)) * scale).astype(np.float32)
    at.bias.data = (r.normal(size=1) * scale).astype(np.float32)
    tau = at(Tensor(r.normal(size=(32, 8)) * scale)).data
    assert (tau > 0.05).all() and (tau < 0.055).all()


# -- supervised contrastive loss ----------------------------------------------------
def test_pair_of_positives_has_zero_loss(rng):
    c = Tensor(rng.normal(size=(2, 5)))
    assert supcon_loss(c, [3, 3], Tensor([0.051, 0.054])).item() == 0.0


def test_identical_projections_give_log_three():
    loss = supcon_loss(Tensor(np.ones((4, 3))), [0, 0, 1, 1], Tensor(np.full(4, 0.05))).item()
    assert abs(loss - math.log(3)) < 1e-6


def test_three_sample_example():
    c = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    y, tau = [0, 0, 1], [0.05, 0.05, 0.05]
    got = _loss64(c, y, tau)
    assert abs(got - math.log1p(math.exp(-20))) < 1e-15
    assert abs(got - 2.06e-9) < 1e-11
    assert abs(got - naive_supcon(c, y, tau)) < 1e-6
    assert abs(supcon_loss(Tensor(c), y, Tensor(tau)).item() - got) < 1e-6


def test_needs_two_samples():
    with pytest.raises(ValueError):
        supcon_loss(Tensor(np.ones((1, 3))), [0], Tensor([0.05]))


def test_no_positive_pairs_gives_zero_and_flag(rng):
    c = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    loss = supcon_loss(c, [0, 1, 2], Tensor(np.full(3, 0.05)))
    assert loss.item() == 0.0
    loss.backward()
    assert not c.grad.any()
    cfg = tiny_config()
    model = LarcModel(cfg, rng)
    ids = np.ones((3, cfg.max_seq_len), dtype=np.int64)
    _, bd = model.loss(ids, np.ones_like(ids, dtype=bool), [0, 1, 2], lam=0.15)
    assert bd.degenerate and bd.con == 0.0


def test_anchors_without_positives_leave_the_average():
    c = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [-1.0, 0.2]])
    tau = [0.05, 0.052, 0.053, 0.05]
    assert abs(_loss64(c, [0, 0, 1, 2], tau) - naive_supcon(c, [0, 0, 1, 2], tau)) < 1e-12


def _hard_batch():
    # the negative sits closer to the anchor than the positive
    ang = np.radians([0.0, 60.0, -30.0])
    return np.stack([np.cos(ang), np.sin(ang)], axis=1), [0, 0, 1]


def test_lower_tau_sharpens_hard_negative_term():
    c, y = _hard_batch()
    warm = _loss64(c, y, [0.055, 0.05, 0.05])
    cold = _loss64(c, y, [0.05, 0.05, 0.05])
    assert cold > warm


def test_lower_tau_relaxes_easy_negative_term():
    c = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert _loss64(c, [0, 0, 1], [0.05, 0.05, 0.05]) < _loss64(c, [0, 0, 1], [0.055, 0.05, 0.05])


@given(seed=seeds)
def test_matches_double_loop_oracle(seed):
    c, y, tau = _random_batch(np.random.default_rng(seed))
    assert abs(_loss64(c, y, tau) - naive_supcon(c, y, tau)) < 1e-6


@given(seed=seeds)
def test_float32_close_to_oracle(seed):
    c, y, tau = _random_batch(np.random.default_rng(seed))
    c, tau = c.astype(np.float32), tau.astype(np.float32)
    got = supcon_loss(Tensor(c), y, Tensor(tau)).item()
    assert abs(got - naive_supcon(c, y, tau)) < 1e-5


@given(seed=seeds)
def test_loss_non_negative(seed):
    c, y, tau = _random_batch(np.random.default_rng(seed))
    assert _loss64(c, y, tau) >= 0.0


@given(seed=seeds, s=st.floats(1e-3, 1e3))
def test_scale_invariance(seed, s):
    c, y, tau = _random_batch(np.random.default_rng(seed))
    assert abs(_loss64(c * s, y, tau) - _loss64(c, y, tau)) < 1e-5


@given(seed=seeds)
def test_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    c, y, tau = _random_batch(r)
    p = r.permutation(len(y))
    assert abs(_loss64(c[p], y[p], tau[p]) - _loss64(c, y, tau)) < 1e-6


# -- progressive weight -----------------------------------------------------------
def test_lambda_table():
    sch = ContrastiveSchedule()
    got = [schedule_lambda(t, sch) for t in (0, 1, 2, 3, 4, 5, 10)]
    assert got == [0.0, 0.03, 0.06, 0.09, 0.12, 0.15, 0.15]


def test_lambda_rejects_negative_epoch():
    with pytest.raises(ValueError):
        schedule_lambda(-0.1, ContrastiveSchedule())


@given(ts=st.lists(st.floats(0, 100), min_size=2, max_size=30))
def test_lambda_monotone_and_clamped(ts):
    sch = ContrastiveSchedule()
    vals = [sch(t) for t in sorted(ts)]
    assert all(0.0 <= v <= 0.15 for v in vals)
    assert all(a <= b for a, b in zip(vals, vals[1:]))
