"""Parity between the compiled kernel lane and the numpy fallback."""

import numpy as np
import pytest

from tasknmt import kernels
from tasknmt.kernels import _python

_compiled = pytest.importorskip("tasknmt.kernels._speedups",
                                reason="compiled kernels not built")


def tolerances(dtype):
    return {"rtol": 2e-6, "atol": 2e-6} if dtype == np.float32 else \
        {"rtol": 1e-12, "atol": 1e-13}


def arrays(seed, dtype):
    rng = np.random.default_rng(seed)
    d, b, l, v = 16, 5, 7, 23
    return {
        "x": rng.normal(size=(d, b)).astype(dtype),
        "y": rng.normal(size=(d, b)).astype(dtype),
        "z01": rng.uniform(0.05, 0.95, size=(d, b)).astype(dtype),
        "g": rng.normal(size=(d, b)).astype(dtype),
        "logits": rng.normal(scale=3, size=(v, b)).astype(dtype),
        "targets": rng.integers(0, v, size=b).astype(np.int64),
        "mask": rng.integers(0, 2, size=b).astype(dtype),
        "proj": rng.normal(size=(l, d, b)).astype(dtype),
        "vvec": rng.normal(size=d).astype(dtype),
        "alpha": rng.dirichlet(np.ones(l), size=b).T.astype(dtype).copy(),
        "states": rng.normal(size=(l, 2 * d, b)).astype(dtype),
        "g_lb": rng.normal(size=(l, b)).astype(dtype),
        "g_hb": rng.normal(size=(2 * d, b)).astype(dtype),
        "table": np.zeros((v, d), dtype=dtype),
        "ids": rng.integers(0, v, size=b).astype(np.int64),
    }


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("seed", range(5))
class TestLaneParity:
    def check(self, name, args, dtype, postprocess=None):
        py = getattr(_python, name)(*[a.copy() if isinstance(a, np.ndarray)
                                      else a for a in args])
        cy = getattr(_compiled, name)(*[a.copy() if isinstance(a, np.ndarray)
                                        else a for a in args])
        if postprocess:
            py, cy = postprocess(py), postprocess(cy)
        if isinstance(py, tuple):
            for p, c in zip(py, cy):
                np.testing.assert_allclose(c, p, **tolerances(dtype))
        else:
            np.testing.assert_allclose(cy, py, **tolerances(dtype))

    def test_sigmoid(self, dtype, seed):
        a = arrays(seed, dtype)
        self.check("sigmoid", (a["x"],), dtype)
        self.check("sigmoid_grad", (a["z01"], a["g"]), dtype)

    def test_tanh(self, dtype, seed):
        a = arrays(seed, dtype)
        self.check("tanh", (a["x"],), dtype)
        self.check("tanh_grad", (a["z01"], a["g"]), dtype)

    def test_gru_blend(self, dtype, seed):
        a = arrays(seed, dtype)
        self.check("gru_blend", (a["z01"], a["x"], a["y"]), dtype)
        self.check("gru_blend_grad", (a["z01"], a["x"], a["y"], a["g"]),
                   dtype)

    def test_gru_fused_pieces(self, dtype, seed):
        a = arrays(seed, dtype)
        self.check("gru_gates_fwd", (a["x"], a["y"], a["g"]), dtype)
        self.check("gru_out_fwd", (a["x"], a["z01"], a["g"]), dtype)
        self.check("gru_out_bwd", (a["g"], a["z01"], np.tanh(a["x"]),
                                   a["y"]), dtype)
        self.check("gru_gates_bwd", (a["g"], a["x"], a["z01"],
                                     a["z01"], a["y"]), dtype)

    def test_softmax_columns(self, dtype, seed):
        a = arrays(seed, dtype)
        self.check("softmax_columns", (a["logits"],), dtype)
        y = _python.softmax_columns(a["logits"])
        g = np.random.default_rng(seed).normal(
            size=y.shape).astype(dtype)
        self.check("softmax_columns_grad", (y, g), dtype)

    def test_softmax_xent(self, dtype, seed):
        a = arrays(seed, dtype)
        self.check("softmax_xent_columns",
                   (a["logits"], a["targets"], a["mask"]), dtype)
        _, probs = _python.softmax_xent_columns(a["logits"], a["targets"],
                                                a["mask"])
        self.check("softmax_xent_columns_grad",
                   (probs, a["targets"], a["mask"], 1.25), dtype)

    def test_attention(self, dtype, seed):
        a = arrays(seed, dtype)
        self.check("attention_energy", (a["x"], a["proj"], a["vvec"]),
                   dtype)
        _, t = _python.attention_energy(a["x"], a["proj"], a["vvec"])
        self.check("attention_energy_grad", (t, a["vvec"], a["g_lb"]),
                   dtype)
        self.check("context_combine", (a["alpha"], a["states"]), dtype)
        self.check("context_combine_grad",
                   (a["alpha"], a["states"], a["g_hb"]), dtype)

    def test_scatter_and_adam(self, dtype, seed):
        a = arrays(seed, dtype)
        t1, t2 = a["table"].copy(), a["table"].copy()
        _python.embedding_scatter_add(t1, a["ids"], a["g"])
        _compiled.embedding_scatter_add(t2, a["ids"], a["g"])
        np.testing.assert_allclose(t2, t1, **tolerances(dtype))

        rng = np.random.default_rng(seed)
        shape = (9, 4)
        p1 = rng.normal(size=shape).astype(dtype)
        g = rng.normal(size=shape).astype(dtype)
        m = rng.normal(size=shape).astype(dtype) * 0.1
        v = rng.uniform(0.0, 0.2, size=shape).astype(dtype)
        p2, m2, v2 = p1.copy(), m.copy(), v.copy()
        _python.adam_step(p1, g, m, v, 3, 1e-3, 0.9, 0.999, 1e-8)
        _compiled.adam_step(p2, g, m2, v2, 3, 1e-3, 0.9, 0.999, 1e-8)
        np.testing.assert_allclose(p2, p1, **tolerances(dtype))
        np.testing.assert_allclose(m2, m, **tolerances(dtype))
        np.testing.assert_allclose(v2, v, **tolerances(dtype))


class TestBackendSelection:
    def test_both_lanes_listed(self):
        assert "python" in kernels.available_backends()
        assert "compiled" in kernels.available_backends()

    def test_set_backend_rebinds_functions(self):
        original = kernels.BACKEND
        try:
            kernels.set_backend("python")
            assert kernels.sigmoid is _python.sigmoid
            kernels.set_backend("compiled")
            assert kernels.sigmoid is _compiled.sigmoid
        finally:
            kernels.set_backend(original)

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError):
            kernels.set_backend("fortran")
