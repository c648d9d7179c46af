import math

from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
import numpy as np
import pytest

from larc.classifier import ClassifierHead, classify, cross_entropy, joint_loss
from larc.errors import DataError
from larc.tensor import Tensor

from oracles import cross_entropy_hp


def test_eval_logits_repeat(rng):
    head = ClassifierHead(8, 16, 5, rng)
    z = Tensor(rng.normal(size=(3, 8)))
    a = classify(z, head, training=False).data
    assert a.shape == (3, 5)
    assert a.tobytes() == classify(z, head, training=False).data.tobytes()


def test_training_mode_applies_dropout(rng):
    head = ClassifierHead(8, 16, 5, rng)
    z = Tensor(rng.normal(size=(3, 8)))
    assert not np.array_equal(classify(z, head, True, np.random.default_rng(0)).data, classify(z, head).data)


def test_zero_head_gives_uniform_probabilities(rng):
    head = ClassifierHead(8, 16, 5, rng)
    for p in head.parameters():
        p.data[...] = 0.0
    logits = classify(Tensor(rng.normal(size=(2, 8))), head)
    np.testing.assert_array_equal(logits.data, 0.0)
    assert abs(cross_entropy(logits, [0, 4]).item() - math.log(5)) < 1e-6


def test_cross_entropy_examples():
    assert abs(cross_entropy(Tensor(np.zeros((1, 5))), [2]).item() - 1.60944) < 1e-5
    assert cross_entropy(Tensor([[50.0, 0, 0]]), [0]).item() < 1e-9
    ce = cross_entropy(Tensor([[1.0, 2.0, 3.0]]), [2]).item()
    assert abs(ce - cross_entropy_hp([1, 2, 3], 2)) < 1e-6
    assert abs(ce - 0.40761) < 1e-5


def test_cross_entropy_is_batch_mean():
    logits = np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]])
    expect = (cross_entropy_hp(logits[0], 0) + cross_entropy_hp(logits[1], 1)) / 2
    assert abs(cross_entropy(Tensor(logits), [0, 1]).item() - expect) < 1e-6


@pytest.mark.parametrize("labels", [[3], [-1], [0, 1]])
def test_cross_entropy_rejects_bad_labels(labels):
    with pytest.raises(DataError):
        cross_entropy(Tensor(np.zeros((1, 3))), labels)


def test_joint_loss_examples():
    assert joint_loss(2.5, 7.0, 0.0).total == 2.5
    assert abs(joint_loss(1.0, 2.0, 0.15).total - 1.3) < 1e-12
    ce, con = cross_entropy_hp([0] * 5, 0), math.log(3)
    bd = joint_loss(ce, con, 0.15)
    assert abs(bd.total - 1.77423) < 1e-5
    assert bd.as_dict() == {"ce": ce, "con": con, "lambda_t": 0.15, "total": bd.total, "degenerate": False}


rows = hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 6)), elements=st.floats(-30, 30))


@given(logits=rows, c=st.floats(-100, 100), data=st.data())
def test_cross_entropy_shift_invariance(logits, c, data):
    y = data.draw(st.lists(st.integers(0, logits.shape[1] - 1), min_size=logits.shape[0], max_size=logits.shape[0]))
    a = cross_entropy(Tensor(logits), y).item()
    b = cross_entropy(Tensor(logits + c), y).item()
    assert a >= 0.0
    assert abs(a - b) <= 1e-6 * max(1.0, abs(a))


@given(ce=st.floats(0, 10), con=st.floats(0, 10), lam=st.floats(0, 0.15))
def test_joint_total_identity(ce, con, lam):
    assert abs(joint_loss(ce, con, lam).total - (ce + lam * con)) <= 1e-6
