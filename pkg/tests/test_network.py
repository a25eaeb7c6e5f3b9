import math

import numpy as np
import pytest

from tavlab.network import (
    ACTIVATIONS, MlpArchitecture, MlpModel, activation, activation_eval, flatten, forward,
    from_weights, init_model, load_model, predict_logits, save_model, unflatten, zeros,
)


def test_param_count():
    assert MlpArchitecture((4, 8, 3)).param_count == 56
    assert MlpArchitecture((4, 8, 3), bias=True).param_count == 56 + 11


def test_activation_constants():
    assert activation("sigmoid").beta_phi == 0.25
    assert activation("sigmoid").gamma_phi == pytest.approx(1 / (6 * math.sqrt(3)))
    assert activation("tanh").gamma_phi == pytest.approx(4 / (3 * math.sqrt(3)))
    assert activation("relu").gamma_phi == 0.0
    with pytest.raises(ValueError):
        activation("gelu")


def test_activation_eval_examples():
    assert activation_eval(activation("relu"), -1.0) == (0.0, 0.0, 0.0)
    f, d1, d2 = activation_eval(activation("sigmoid"), 0.0)
    assert (f, d1, d2) == (0.5, 0.25, 0.0)


@pytest.mark.parametrize("z", np.linspace(-4, 4, 17))
def test_tanh_second_derivative_identity(z):
    f, d1, d2 = activation_eval(activation("tanh"), z)
    assert abs(d2 - (-2 * f * d1)) <= 1e-12


@pytest.mark.parametrize("name", ["sigmoid", "tanh"])
def test_derivative_sups_match_constants(name):
    kind = activation(name)
    zs = np.linspace(-6, 6, 20001)
    vals = np.array([activation_eval(kind, z) for z in zs])
    assert np.max(np.abs(vals[:, 1])) <= kind.beta_phi + 1e-12
    assert np.max(np.abs(vals[:, 2])) == pytest.approx(kind.gamma_phi, rel=1e-6)


def test_zero_weights_give_zero_logits():
    arch = MlpArchitecture((3, 5, 4))
    logits, _ = forward(zeros(arch), np.array([1.0, -2.0, 0.5]))
    assert np.all(logits == 0.0)


def test_identity_single_layer():
    arch = MlpArchitecture((2, 2), "tanh")
    model = from_weights(arch, [np.eye(2)])
    logits, _ = forward(model, np.array([1.0, 2.0]))
    assert np.array_equal(logits, [1.0, 2.0])


def test_relu_two_layer_matches_straight_line():
    arch = MlpArchitecture((3, 4, 2), "relu")
    model = init_model(arch, 5)
    W1, W2 = model.weights
    x = np.array([0.3, -1.2, 0.8])
    h = [sum(W1[i, j] * x[j] for j in range(3)) for i in range(4)]
    a = [v if v > 0 else 0.0 for v in h]
    ref = [sum(W2[i, j] * a[j] for j in range(4)) for i in range(2)]
    logits, _ = forward(model, x)
    assert np.allclose(logits, ref, rtol=0, atol=1e-15)


def test_batch_logits_match_forward(backend):
    arch = MlpArchitecture((3, 5, 2), "sigmoid", bias=True)
    model = init_model(arch, 1)
    X = np.random.default_rng(0).standard_normal((6, 3))
    Z = predict_logits(model, X)
    for i in range(6):
        assert np.allclose(Z[i], forward(model, X[i])[0], rtol=0, atol=1e-14)


def test_flatten_roundtrip():
    arch = MlpArchitecture((4, 6, 3), bias=True)
    model = init_model(arch, 3)
    assert np.array_equal(unflatten(arch, flatten(model)).params, model.params)
    assert np.all(flatten(zeros(arch)) == 0.0) and flatten(zeros(arch)).shape == (arch.param_count,)


def test_wrong_length_rejected():
    arch = MlpArchitecture((4, 6, 3))
    with pytest.raises(ValueError, match="length"):
        unflatten(arch, np.zeros(5))
    with pytest.raises(ValueError):
        MlpModel(arch, np.full(arch.param_count, np.inf))


def test_params_read_only():
    model = init_model(MlpArchitecture((2, 2)), 0)
    with pytest.raises(ValueError):
        model.params[0] = 1.0


def test_checkpoint_roundtrip(tmp_path):
    arch = MlpArchitecture((4, 6, 3), "relu", bias=True)
    model = init_model(arch, 9)
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    assert back.arch == arch
    assert np.array_equal(back.params, model.params)


def test_init_is_seeded():
    arch = MlpArchitecture((4, 6, 3))
    assert np.array_equal(init_model(arch, 1).params, init_model(arch, 1).params)
    assert not np.array_equal(init_model(arch, 1).params, init_model(arch, 2).params)
    assert set(ACTIVATIONS) >= {"relu", "sigmoid", "tanh", "identity"}
