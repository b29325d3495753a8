import numpy as np
import pytest

from featgen.errors import ConfigError
from featgen.nnkernel import (Adam, EncoderBlock, FeedForward, LayerNorm,
                              Linear, MLP, MultiHeadAttention, load_params,
                              save_params)

from conftest import finite_difference_gradient, relative_error

GRAD_TOL = 1e-4


def check_param_gradients(module, x, seed=0):
    """Analytic parameter and input gradients vs central finite differences
    on the scalar loss sum(forward(x) * R) for a fixed random R."""
    rng = np.random.default_rng(seed)
    out, cache = module.forward(x)
    r = rng.normal(size=out.shape)

    def loss():
        y, _ = module.forward(x)
        return float(np.sum(y * r))

    dx, grads = module.backward(cache, r.copy())
    for name, param in module.parameters().items():
        num = finite_difference_gradient(loss, param)
        assert relative_error(grads[name], num) < GRAD_TOL, name
    num_dx = finite_difference_gradient(loss, x)
    assert relative_error(dx, num_dx) < GRAD_TOL, "input gradient"


class TestLinear:
    def test_gradients(self):
        rng = np.random.default_rng(1)
        check_param_gradients(Linear(rng, 5, 3), rng.normal(size=(4, 5)))

    def test_zero_weight_outputs_bias(self):
        rng = np.random.default_rng(0)
        lin = Linear(rng, 3, 2)
        lin.W[...] = 0.0
        lin.b[...] = [1.5, -2.0]
        out, _ = lin.forward(np.ones((4, 3)))
        np.testing.assert_array_equal(out, np.tile([1.5, -2.0], (4, 1)))


class TestLayerNorm:
    def test_constant_row_zeros(self):
        ln = LayerNorm(4)
        out, _ = ln.forward(np.full((2, 4), 7.0))
        np.testing.assert_array_equal(out, np.zeros((2, 4)))

    def test_row_statistics(self):
        rng = np.random.default_rng(2)
        ln = LayerNorm(16)
        out, _ = ln.forward(rng.normal(size=(5, 16), scale=3.0))
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)

    def test_two_element_row_hand_computed(self):
        ln = LayerNorm(2)
        out, _ = ln.forward(np.array([[1.0, 3.0]]))
        expected = 1.0 / np.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(out, [[-expected, expected]], atol=1e-15)

    def test_gradients(self):
        rng = np.random.default_rng(3)
        check_param_gradients(LayerNorm(6), rng.normal(size=(3, 6)))


class TestMultiHeadAttention:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        mha = MultiHeadAttention(rng, 8, 4)
        attn = mha.attention_weights(rng.normal(size=(5, 8)))
        np.testing.assert_allclose(attn.sum(axis=2), 1.0, atol=1e-9)

    def test_single_token_identity(self):
        rng = np.random.default_rng(5)
        mha = MultiHeadAttention(rng, 8, 2)
        x = rng.normal(size=(1, 8))
        attn = mha.attention_weights(x)
        np.testing.assert_allclose(attn, np.ones((2, 1, 1)), atol=0)
        out, _ = mha.forward(x)
        # attention of one token is the identity: out = x Wv Wo
        np.testing.assert_allclose(out, (x @ mha.wv.W) @ mha.wo.W, atol=1e-12)

    def test_two_token_hand_computed(self):
        # independent re-implementation of softmax(QK^T/sqrt(dk))V with numpy
        rng = np.random.default_rng(6)
        mha = MultiHeadAttention(rng, 4, 1)
        x = rng.normal(size=(2, 4))
        q = x @ mha.wq.W
        k = x @ mha.wk.W
        v = x @ mha.wv.W
        scores = q @ k.T / np.sqrt(4.0)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        a = e / e.sum(axis=1, keepdims=True)
        expected = (a @ v) @ mha.wo.W
        out, _ = mha.forward(x)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_permutation_equivariance_exact(self):
        rng = np.random.default_rng(7)
        mha = MultiHeadAttention(rng, 8, 8)
        x = rng.normal(size=(7, 8))
        out, _ = mha.forward(x)
        perm = rng.permutation(7)
        out_p, _ = mha.forward(x[perm])
        np.testing.assert_array_equal(out_p, out[perm])

    def test_divisibility_validated(self):
        with pytest.raises(ConfigError):
            MultiHeadAttention(np.random.default_rng(0), 8, 3)

    def test_gradients(self):
        rng = np.random.default_rng(8)
        check_param_gradients(MultiHeadAttention(rng, 6, 2), rng.normal(size=(4, 6)))


class TestFeedForwardAndBlock:
    def test_ffn_gradients(self):
        rng = np.random.default_rng(9)
        check_param_gradients(FeedForward(rng, 5, 11), rng.normal(size=(3, 5)))

    def test_block_gradients(self):
        rng = np.random.default_rng(10)
        check_param_gradients(EncoderBlock(rng, 4, 2, 9), rng.normal(size=(3, 4)))

    def test_block_deterministic(self):
        rng = np.random.default_rng(11)
        block = EncoderBlock(rng, 8, 4, 16)
        x = rng.normal(size=(5, 8))
        a, _ = block.forward(x)
        b, _ = block.forward(x.copy())
        np.testing.assert_array_equal(a, b)


class TestMLP:
    def test_zero_weights_output_bias(self):
        rng = np.random.default_rng(12)
        mlp = MLP(rng, (4, 8, 3))
        for layer in mlp.layers:
            layer.W[...] = 0.0
        mlp.layers[-1].b[...] = [0.5, -1.0, 2.0]
        out, _ = mlp.forward(np.ones(4))
        np.testing.assert_array_equal(out, [0.5, -1.0, 2.0])

    def test_identity_network_is_relu(self):
        rng = np.random.default_rng(13)
        mlp = MLP(rng, (1, 1, 1))
        mlp.layers[0].W[...] = 1.0
        mlp.layers[0].b[...] = 0.0
        mlp.layers[1].W[...] = 1.0
        mlp.layers[1].b[...] = 0.0
        for x in (-2.0, -0.5, 0.0, 0.7, 3.0):
            out, _ = mlp.forward(np.array([x]))
            assert out[0] == max(0.0, x)

    def test_gradients_batch_and_vector(self):
        rng = np.random.default_rng(14)
        check_param_gradients(MLP(rng, (5, 7, 3)), rng.normal(size=(6, 5)))
        check_param_gradients(MLP(rng, (4, 6, 2)), rng.normal(size=4))

    def test_shape_mismatch_raises(self):
        rng = np.random.default_rng(15)
        mlp = MLP(rng, (4, 3))
        with pytest.raises(ValueError):
            mlp.forward(np.ones((2, 5)))


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = {"w": np.array([1.0, -2.0])}
        adam = Adam(p, lr=0.1)
        adam.step({"w": np.zeros(2)})
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step_is_signed_lr(self):
        # at t=1 bias correction gives an update of ~ -lr * sign(g)
        p = {"w": np.array([0.0, 0.0])}
        adam = Adam(p, lr=1e-3)
        adam.step({"w": np.array([5.0, -0.01])})
        np.testing.assert_allclose(p["w"], [-1e-3, 1e-3], rtol=1e-6)

    def test_identical_tensors_stay_identical(self):
        rng = np.random.default_rng(16)
        w = rng.normal(size=(3, 2))
        p = {"a": w.copy(), "b": w.copy()}
        adam = Adam(p, lr=0.01)
        for _ in range(5):
            g = rng.normal(size=(3, 2))
            adam.step({"a": g.copy(), "b": g.copy()})
        np.testing.assert_array_equal(p["a"], p["b"])

    def test_updates_in_place(self):
        w = np.zeros(2)
        adam = Adam({"w": w}, lr=0.1)
        adam.step({"w": np.ones(2)})
        assert w[0] != 0.0  # the live array moved


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        params = {"enc.proj.W": rng.normal(size=(8, 8)), "head.b": rng.normal(size=3)}
        path = tmp_path / "ckpt.npz"
        save_params(path, params)
        loaded = load_params(path)
        assert set(loaded) == set(params)
        for k in params:
            np.testing.assert_array_equal(loaded[k], params[k])

    def test_version_checked(self, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(path, __version__=np.array([999]), w=np.ones(2))
        with pytest.raises(ValueError, match="version"):
            load_params(path)
