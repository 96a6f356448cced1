import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memg.gradcheck import check_network
from memg.neural import (
    ACTIVATIONS,
    AdamState,
    CheckpointSchemaError,
    CheckpointVersionError,
    Dense,
    DenseNetwork,
    adam_step,
    dumps_checkpoint,
    load_checkpoint,
    save_checkpoint,
    soft_update,
)


def single(w, b, activation="identity", slope=0.2):
    return DenseNetwork([Dense(np.array(w, float), np.array(b, float), activation, slope)])


def test_forward_examples():
    x = np.array([[1.0, -2.0, 3.0]])
    assert np.array_equal(single(np.eye(3), np.zeros(3)).forward(x), x)
    assert single([[2.0]], [3.0]).forward(np.array([[1.0]])).tolist() == [[5.0]]
    assert single([[1.0]], [0.0], "leaky_relu").forward(np.array([[-1.0]]))[0, 0] == pytest.approx(-0.2)


def test_forward_errors():
    net = single(np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        net.forward(np.ones((2, 4)))
    with pytest.raises(ValueError):
        net.forward(np.array([[np.nan, 0, 0]]))
    with pytest.raises(RuntimeError):
        single(np.eye(3), np.zeros(3)).backward(np.ones((1, 3)))
    with pytest.raises(ValueError):
        DenseNetwork([Dense(np.ones((2, 3)), np.zeros(3), "relu", 0.0), Dense(np.ones((2, 1)), np.zeros(1), "relu", 0.0)])


def test_backward_linear_example():
    net = single([[2.0]], [0.0])
    y = net.forward(np.array([[1.0]]), mode="train")
    grads, _ = net.backward(2 * y)  # d(y^2)/dy
    assert grads[0][0, 0] == pytest.approx(4.0)
    h = 1e-5
    fd = (((2 + h) * 1.0) ** 2 - ((2 - h) * 1.0) ** 2) / (2 * h)
    assert grads[0][0, 0] == pytest.approx(fd, rel=1e-8)


def test_zero_upstream_gives_zero_gradients():
    net = DenseNetwork.build([4, 5, 3], np.random.default_rng(0), hidden="tanh", batchnorm_hidden=True)
    net.forward(np.random.default_rng(1).normal(size=(6, 4)), mode="train")
    grads, dx = net.backward(np.zeros((6, 3)))
    assert all(not g.any() for g in grads) and not dx.any()


@pytest.mark.parametrize("seed", range(10))
def test_random_network_gradcheck(seed):
    assert check_network(np.random.default_rng(seed)).max_rel_error < 1e-4


def test_eval_mode_deterministic_and_train_updates_running_stats():
    net = DenseNetwork.build([3, 4, 2], np.random.default_rng(0), batchnorm_hidden=True)
    x = np.random.default_rng(1).normal(size=(5, 3))
    a, b = net.forward(x), net.forward(x)
    assert np.array_equal(a, b)
    before = net.layers[0].batchnorm.running_mean.copy()
    net.forward(x, mode="train")
    assert not np.array_equal(before, net.layers[0].batchnorm.running_mean)


# ---------------------------------------------------------------- Adam


def test_adam_first_step_example():
    p = [np.array([0.0])]
    state = AdamState.for_params(p, lr=0.1, beta1=0.5, beta2=0.999)
    adam_step(p, [np.array([1.0])], state)
    assert p[0][0] == pytest.approx(-0.1, rel=1e-6)
    assert state.t == 1


def test_adam_zero_gradient_fixed_point():
    rng = np.random.default_rng(0)
    p = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    orig = [a.copy() for a in p]
    state = AdamState.for_params(p, lr=0.1)
    for _ in range(5):
        adam_step(p, [np.zeros_like(a) for a in p], state)
    assert state.t == 5
    assert all(np.array_equal(a, b) for a, b in zip(p, orig))


@given(g=st.floats(-10, 10).filter(lambda v: abs(v) > 1e-6))
def test_adam_symmetry(g):
    p = [np.zeros(2)]
    adam_step(p, [np.array([g, g])], AdamState.for_params(p, lr=0.01))
    assert p[0][0] == p[0][1]


def test_adam_length_mismatch():
    p = [np.zeros(2)]
    with pytest.raises(ValueError):
        adam_step(p, [np.zeros(2), np.zeros(2)], AdamState.for_params(p, lr=0.1))


# ---------------------------------------------------------------- soft update


def test_soft_update_examples():
    t = [np.array([0.0])]
    soft_update(t, [np.array([1.0])], 0.001)
    assert t[0][0] == pytest.approx(0.001)
    t = [np.array([0.3, 0.4])]
    soft_update(t, [np.array([1.0, 2.0])], 1.0)
    assert t[0].tolist() == [1.0, 2.0]
    t = [np.array([0.0])]
    for _ in range(1000):
        soft_update(t, [np.array([1.0])], 0.001)
    assert t[0][0] == pytest.approx(1 - 0.999**1000, rel=1e-10)


@given(tau=st.floats(0, 1), a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_soft_update_affine_in_tau(tau, a, b):
    t = [np.array([a])]
    soft_update(t, [np.array([b])], tau)
    assert t[0][0] == pytest.approx(tau * b + (1 - tau) * a, abs=1e-12)
    t = [np.array([a])]
    soft_update(t, [np.array([b])], 0.0)
    assert t[0][0] == a


# ---------------------------------------------------------------- checkpoints


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), act=st.sampled_from(ACTIVATIONS), bn=st.booleans())
def test_checkpoint_round_trip(tmp_path_factory, seed, act, bn):
    rng = np.random.default_rng(seed)
    net = DenseNetwork.build([3, 5, 4, 2], rng, hidden=act, output="tanh", slope=0.2, batchnorm_hidden=bn)
    x = rng.normal(size=(7, 3))
    if bn:
        net.forward(x, mode="train")
    path = tmp_path_factory.mktemp("ckpt") / "c.json"
    save_checkpoint({"net": net}, {"seed": seed}, path)
    nets, meta = load_checkpoint(path)
    assert meta == {"seed": seed}
    assert np.array_equal(nets["net"].forward(x), net.forward(x))
    # a second save is byte-identical
    assert dumps_checkpoint(nets, meta) == path.read_text()


def test_checkpoint_errors(tmp_path):
    net = DenseNetwork.build([2, 2], np.random.default_rng(0))
    path = tmp_path / "c.json"
    save_checkpoint({"net": net}, {}, path)
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)
    doc["version"] = 1
    del doc["tensors"]["net/0.bias"]
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointSchemaError, match="missing tensor"):
        load_checkpoint(path)
    doc = json.loads(dumps_checkpoint({"net": net}, {}))
    doc["tensors"]["net/0.weight"]["data"].pop()
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointSchemaError):
        load_checkpoint(path)
    path.write_text("{not json")
    with pytest.raises(CheckpointSchemaError):
        load_checkpoint(path)
