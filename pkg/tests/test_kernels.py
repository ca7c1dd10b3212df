import os
import subprocess
import sys

import numpy as np
import pytest

from datapaths.kernels import _numpy as KN

numba_impl = pytest.importorskip("datapaths.kernels._numba")


def test_hand_convolution_values():
    # 3x3 input, 2x2 kernel, stride 1, no padding, worked out by hand
    x = np.arange(9, dtype=np.float64).reshape(1, 3, 3)
    w = np.array([[[[1.0, 0.0], [0.0, -1.0]]]])
    b = np.array([0.5])
    y = KN.conv2d_forward(x, w, b, 1, 0)
    # each output = x[i,j] - x[i+1,j+1] + 0.5 = -4 + 0.5
    assert np.array_equal(y, np.full((1, 2, 2), -3.5))


@pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 2), (3, 2, 4)])
def test_backend_parity(stride, padding, k):
    rng = np.random.default_rng(hash((stride, padding, k)) % 2**32)
    c_in, c_out, size = 3, 4, 9
    x = rng.normal(size=(c_in, size, size))
    w = rng.normal(size=(c_out, c_in, k, k))
    b = rng.normal(size=c_out)
    y_np = KN.conv2d_forward(x, w, b, stride, padding)
    y_nb = numba_impl.conv2d_forward(x, w, b, stride, padding)
    assert np.allclose(y_np, y_nb, rtol=1e-13, atol=1e-13)

    dy = rng.normal(size=y_np.shape)
    dx_np = KN.conv2d_backward_input(dy, w, stride, padding, size, size)
    dx_nb = numba_impl.conv2d_backward_input(dy, w, stride, padding, size, size)
    assert np.allclose(dx_np, dx_nb, rtol=1e-13, atol=1e-13)

    dw_np, db_np = KN.conv2d_backward_weights(dy, x, k, k, stride, padding)
    dw_nb, db_nb = numba_impl.conv2d_backward_weights(dy, x, k, k, stride, padding)
    assert np.allclose(dw_np, dw_nb, rtol=1e-13, atol=1e-13)
    assert np.allclose(db_np, db_nb, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("window,stride", [(2, 2), (2, 1), (3, 2)])
def test_maxpool_parity(window, stride):
    rng = np.random.default_rng(window * 10 + stride)
    x = rng.normal(size=(3, 8, 8))
    y_np, idx_np = KN.maxpool_forward(x, window, stride)
    y_nb, idx_nb = numba_impl.maxpool_forward(x, window, stride)
    assert np.array_equal(y_np, y_nb)
    assert np.array_equal(idx_np, idx_nb)
    dy = rng.normal(size=y_np.shape)
    assert np.allclose(KN.maxpool_backward(dy, idx_np, 8, 8),
                       numba_impl.maxpool_backward(dy, idx_nb, 8, 8), rtol=1e-13)


def test_maxpool_tie_routes_to_first_row_major_index():
    x = np.full((1, 2, 2), 3.0)  # every window entry ties
    for impl in (KN, numba_impl):
        y, idx = impl.maxpool_forward(x, 2, 2)
        assert y[0, 0, 0] == 3.0
        assert idx[0, 0, 0] == 0  # flat index of (0, 0)
        dx = impl.maxpool_backward(np.array([[[2.0]]]), idx, 2, 2)
        assert np.array_equal(dx, np.array([[[2.0, 0.0], [0.0, 0.0]]]))


def run_probe(env_value):
    code = "import datapaths.kernels as k; print(k.BACKEND)"
    env = dict(os.environ)
    env.pop("DATAPATHS_KERNELS", None)
    if env_value:
        env["DATAPATHS_KERNELS"] = env_value
    return subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)


def test_backend_env_selection():
    assert run_probe("numpy").stdout.strip() == "numpy"
    assert run_probe("").stdout.strip() in ("numba", "numpy")
    bad = run_probe("cuda")
    assert bad.returncode != 0 and "DATAPATHS_KERNELS" in bad.stderr
