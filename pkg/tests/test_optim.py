from hypothesis import given, strategies as st
import numpy as np
import pytest

from larc.errors import ConfigError, NumericalFailure
from larc.model import LarcModel
from larc.audit import tiny_config
from larc.optim import AdamW, OptimizerConfig, ParamGroup, clip_global_norm, global_norm, lr_at, lr_multiplier
from larc.tensor import Tensor
from larc.training import TrainingConfig, make_optimizer, train
from larc.data import Example

from oracles import scalar_adamw


def _single(theta, **kw):
    p = Tensor(np.array(theta, dtype=np.float32), requires_grad=True)
    cfg = OptimizerConfig(weight_decay=kw.pop("wd", 0.0), **kw)
    return p, AdamW([ParamGroup("g", [("p", p)], 0.1)], cfg)


# -- AdamW ------------------------------------------------------------------------
def test_first_step_moves_by_lr():
    p, opt = _single([1.0, -2.0])
    p.grad = np.ones(2, dtype=np.float32)
    opt.step({"g": 0.1})
    np.testing.assert_allclose(p.data, [0.9, -2.1], rtol=1e-6)


def test_zero_gradient_without_decay_is_a_no_op():
    p, opt = _single([[1.0, -2.0]])
    p.grad = np.zeros((1, 2), dtype=np.float32)
    before = p.data.copy()
    opt.step({"g": 0.1})
    np.testing.assert_array_equal(p.data, before)


def test_matches_scalar_reference_on_quadratic():
    p, opt = _single([[1.0]])
    trace = []
    for _ in range(10):
        p.grad = 2.0 * p.data
        opt.step({"g": 0.1})
        trace.append(float(p.data[0, 0]))
    expect = scalar_adamw(1.0, lambda t: 2.0 * t, steps=10, lr=0.1)
    np.testing.assert_allclose(trace, expect, rtol=0, atol=1e-6)


def test_decay_is_decoupled():
    p, opt = _single([[2.0, -4.0]], wd=0.01)
    p.grad = np.zeros((1, 2), dtype=np.float32)
    opt.step({"g": 0.1})
    np.testing.assert_allclose(p.data, [[2.0 * (1 - 0.001), -4.0 * (1 - 0.001)]], rtol=1e-7)


def test_decayed_quadratic_matches_reference():
    p, opt = _single([[1.0]], wd=0.05)
    trace = []
    for _ in range(10):
        p.grad = 2.0 * p.data
        opt.step({"g": 0.1})
        trace.append(float(p.data[0, 0]))
    np.testing.assert_allclose(trace, scalar_adamw(1.0, lambda t: 2.0 * t, 10, 0.1, wd=0.05), atol=1e-6)


def test_vectors_are_not_decayed():
    p, opt = _single([2.0, -4.0], wd=0.5)
    p.grad = np.zeros(2, dtype=np.float32)
    opt.step({"g": 0.1})
    np.testing.assert_array_equal(p.data, [2.0, -4.0])


def test_overlapping_groups_rejected():
    p = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ConfigError):
        AdamW([ParamGroup("a", [("p", p)], 1.0), ParamGroup("b", [("p", p)], 1.0)], OptimizerConfig())


def test_groups_partition_the_model(rng):
    model = LarcModel(tiny_config(), rng)
    opt = make_optimizer(model, OptimizerConfig())
    names = {g.group_id: {n for n, _ in g.params} for g in opt.groups}
    everything = {n for n, _ in model.named_parameters()}
    assert names["backbone"] | names["new"] == everything
    assert not names["backbone"] & names["new"]
    assert all(n.startswith("encoder.") and "pooler" not in n for n in names["backbone"])
    assert {"encoder.pooler.weight", "fusion.w", "temperature.weight", "classifier.w3", "projection.w1"} <= names["new"]


# -- schedule -----------------------------------------------------------------------
def test_lr_schedule_endpoints():
    cfg = OptimizerConfig(total_steps=100)
    assert lr_at(0, cfg) == {"backbone": 0.0, "new": 0.0}
    assert lr_at(cfg.warmup_steps, cfg) == {"backbone": 2e-6, "new": 1e-5}
    assert lr_at(100, cfg) == {"backbone": 0.0, "new": 0.0}
    assert cfg.warmup_steps == 10


def test_lr_schedule_needs_steps():
    with pytest.raises(ConfigError):
        lr_multiplier(0, OptimizerConfig(total_steps=0))
    with pytest.raises(ConfigError):
        OptimizerConfig(total_steps=0).validate()
    with pytest.raises(ConfigError):
        OptimizerConfig(warmup_fraction=1.0).validate()


@given(total=st.integers(1, 500), frac=st.floats(0, 0.99))
def test_lr_schedule_piecewise_linear(total, frac):
    cfg = OptimizerConfig(total_steps=total, warmup_fraction=frac)
    m = np.array([lr_multiplier(s, cfg) for s in range(total + 1)])
    assert (m >= 0).all() and (m <= 1).all()
    w = cfg.warmup_steps
    assert m[w] == 1.0 or w == total
    np.testing.assert_allclose(np.diff(m[: w + 1]), 1.0 / w if w else 0.0, atol=1e-12)
    if w < total:
        np.testing.assert_allclose(np.diff(m[w:]), -1.0 / (total - w), atol=1e-12)


# -- clipping ------------------------------------------------------------------------
def test_clip_examples():
    g = [np.array([0.3, 0.4], dtype=np.float32)]
    assert clip_global_norm(g, 1.0)[1] == 1.0
    np.testing.assert_array_equal(g[0], np.array([0.3, 0.4], dtype=np.float32))
    g = [np.array([1.2, 1.6], dtype=np.float32)]
    norm, scale = clip_global_norm(g, 1.0)
    assert norm == pytest.approx(2.0) and scale == pytest.approx(0.5)
    assert abs(global_norm(g) - 1.0) < 1e-6


def test_clip_rejects_non_finite():
    with pytest.raises(NumericalFailure):
        clip_global_norm([np.array([np.inf, 1.0])], 1.0)


@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3), n=st.integers(1, 5))
def test_clip_postcondition(seed, scale, n):
    r = np.random.default_rng(seed)
    grads = [(r.normal(size=r.integers(1, 20)) * scale).astype(np.float32) for _ in range(n)]
    pre = global_norm(grads)
    clip_global_norm(grads, 1.0)
    assert abs(global_norm(grads) - min(pre, 1.0)) <= 1e-5 * max(1.0, min(pre, 1.0))


# -- accumulation ------------------------------------------------------------------
def test_two_micro_batches_equal_one_batch():
    r = np.random.default_rng(5)
    data = [Example(" ".join(f"t{j}" for j in r.integers(0, 12, size=5)), int(k)) for k in r.integers(0, 3, size=32)]
    base = dict(num_layers=2, hidden_dim=16, num_heads=2, ffn_dim=32, contrastive_dim=8, head_hidden=16,
                max_seq_len=8, epochs=2, seed=3, lr_backbone=1e-3, lr_new=1e-3, enable_contrastive=False)
    split = train(TrainingConfig(batch_size=8, accum_steps=2, **base), data)
    whole = train(TrainingConfig(batch_size=16, accum_steps=1, **base), data)
    assert len(split.history) == len(whole.history) == 4
    for name, p in split.model.named_parameters():
        np.testing.assert_allclose(p.data, dict(whole.model.named_parameters())[name].data, atol=1e-5, err_msg=name)
