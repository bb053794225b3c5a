import numpy as np
import pytest

from relex import kernels
from relex.kernels import pure

NATIVE = "native" in kernels.available_backends()
needs_native = pytest.mark.skipif(not NATIVE, reason="native extension not built")


@pytest.fixture(autouse=True)
def restore_backend():
    yield
    kernels.set_backend("native" if NATIVE else "pure")


def _case(dtype, rng):
    x = rng.normal(size=(37, 16)).astype(dtype)
    gamma = (rng.normal(size=16) + 2).astype(dtype)
    beta = rng.normal(size=16).astype(dtype)
    dy = rng.normal(size=x.shape).astype(dtype)
    return x, gamma, beta, dy


class TestPureKernelMath:
    """The pure backend against straight formulas (independent expressions)."""

    def test_layer_norm_forward(self):
        x, gamma, beta, _ = _case(np.float64, np.random.default_rng(0))
        y, mean, rstd = pure.layer_norm_forward(x, gamma, beta, 1e-5)
        mu = x.mean(axis=1, keepdims=True)
        sigma = np.sqrt(x.var(axis=1, keepdims=True) + 1e-5)
        np.testing.assert_allclose(y, (x - mu) / sigma * gamma + beta, rtol=1e-12)
        np.testing.assert_allclose(mean, mu[:, 0], rtol=1e-12)
        np.testing.assert_allclose(rstd, 1 / sigma[:, 0], rtol=1e-12)

    def test_layer_norm_backward_vs_finite_differences(self):
        rng = np.random.default_rng(1)
        x, gamma, beta, dy = _case(np.float64, rng)
        y, mean, rstd = pure.layer_norm_forward(x, gamma, beta, 1e-5)
        dx, dgamma, dbeta = pure.layer_norm_backward(dy, x, gamma, mean, rstd)
        eps = 1e-6

        def loss(xx, gg, bb):
            yy, _, _ = pure.layer_norm_forward(xx, gg, bb, 1e-5)
            return float((yy * dy).sum())

        for _ in range(20):
            i, j = rng.integers(x.shape[0]), rng.integers(x.shape[1])
            xp = x.copy(); xp[i, j] += eps
            xm = x.copy(); xm[i, j] -= eps
            fd = (loss(xp, gamma, beta) - loss(xm, gamma, beta)) / (2 * eps)
            assert abs(dx[i, j] - fd) < 1e-5 * (1 + abs(fd))
        for j in range(x.shape[1]):
            gp = gamma.copy(); gp[j] += eps
            gm = gamma.copy(); gm[j] -= eps
            fd = (loss(x, gp, beta) - loss(x, gm, beta)) / (2 * eps)
            assert abs(dgamma[j] - fd) < 1e-5 * (1 + abs(fd))
        np.testing.assert_allclose(dbeta, dy.sum(axis=0), rtol=1e-12)

    def test_softmax_rows(self):
        x, _, _, _ = _case(np.float64, np.random.default_rng(2))
        y = pure.softmax_rows(x)
        expected = np.exp(x) / np.exp(x).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(y, expected, rtol=1e-12)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)

    def test_softmax_backward(self):
        rng = np.random.default_rng(3)
        x, _, _, dy = _case(np.float64, rng)
        y = pure.softmax_rows(x)
        dx = pure.softmax_backward_rows(y, dy)
        eps = 1e-6
        for _ in range(20):
            i, j = rng.integers(x.shape[0]), rng.integers(x.shape[1])
            xp = x.copy(); xp[i, j] += eps
            xm = x.copy(); xm[i, j] -= eps
            fd = ((pure.softmax_rows(xp) * dy).sum()
                  - (pure.softmax_rows(xm) * dy).sum()) / (2 * eps)
            assert abs(dx[i, j] - fd) < 1e-6 * (1 + abs(fd))

    def test_gelu_matches_tanh_formula_and_gradient(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(11, 7)) * 3
        y = pure.gelu_forward(x)
        c = np.sqrt(2 / np.pi)
        expected = 0.5 * x * (1 + np.tanh(c * (x + 0.044715 * x**3)))
        np.testing.assert_allclose(y, expected, rtol=1e-12)
        dy = rng.normal(size=x.shape)
        dx = pure.gelu_backward(x, dy)
        eps = 1e-6
        fd = (pure.gelu_forward(x + eps) - pure.gelu_forward(x - eps)) / (2 * eps)
        np.testing.assert_allclose(dx, dy * fd, rtol=1e-6, atol=1e-8)

    def test_adam_first_step_hand_computed(self):
        # g = 1, lr = 0.1: m_hat = 1, v_hat = 1 -> step == -0.1/(1+eps)
        param = np.zeros(1)
        m = np.zeros(1)
        v = np.zeros(1)
        pure.adam_update(param, np.ones(1), m, v, 0.1, 0.9, 0.999, 1e-8, 1)
        assert abs(param[0] + 0.1) < 1e-8
        assert abs(m[0] - 0.1) < 1e-15
        assert abs(v[0] - 0.001) < 1e-15

    def test_adam_zero_gradient_noop(self):
        param = np.full(5, 3.0)
        m = np.zeros(5)
        v = np.zeros(5)
        pure.adam_update(param, np.zeros(5), m, v, 0.1, 0.9, 0.999, 1e-8, 1)
        np.testing.assert_array_equal(param, np.full(5, 3.0))


@needs_native
@pytest.mark.parametrize("dtype,atol", [(np.float64, 1e-11), (np.float32, 1e-4)])
def test_backends_agree(dtype, atol):
    rng = np.random.default_rng(7)
    x, gamma, beta, dy = _case(dtype, rng)
    outs = {}
    for backend in ("pure", "native"):
        kernels.set_backend(backend)
        y, mean, rstd = kernels.layer_norm_forward(x, gamma, beta, 1e-5)
        dx, dgamma, dbeta = kernels.layer_norm_backward(dy, x, gamma, mean, rstd)
        sm = kernels.softmax_rows(x)
        smb = kernels.softmax_backward_rows(sm, dy)
        gf = kernels.gelu_forward(x)
        gb = kernels.gelu_backward(x, dy)
        param = np.linspace(-1, 1, 64).astype(dtype)
        m = np.zeros(64, dtype=dtype)
        v = np.zeros(64, dtype=dtype)
        kernels.adam_update(param, np.ones(64, dtype=dtype), m, v,
                            1e-2, 0.9, 0.999, 1e-8, 3)
        outs[backend] = (y, mean, rstd, dx, dgamma, dbeta, sm, smb, gf, gb, param, m, v)
    for a, b in zip(outs["pure"], outs["native"]):
        assert a.dtype == b.dtype
        np.testing.assert_allclose(a, b, atol=atol, rtol=1e-5)


@needs_native
def test_env_and_set_backend_selection():
    kernels.set_backend("pure")
    assert kernels.BACKEND == "pure"
    assert kernels.gelu_forward is pure.gelu_forward
    kernels.set_backend("native")
    assert kernels.BACKEND == "native"
    with pytest.raises(ValueError):
        kernels.set_backend("gpu")
