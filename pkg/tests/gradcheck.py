"""Independent numerical oracles used across the test suite.

Nothing here touches the gradient tape: the finite-difference check
evaluates plain array->scalar callables, and the naive matmul is a
triple loop. These are the reference implementations the library code
is verified against.
"""

import numpy as np

FD_EPS = 1e-5
FD_RTOL = 1e-4
FD_ATOL = 1e-6


def numeric_grad(f, arrays, eps=FD_EPS):
    """Central finite-difference gradient of scalar f w.r.t. each array.

    f takes copies of `arrays` (list of np.ndarray) and returns a float.
    """
    grads = []
    for i, base in enumerate(arrays):
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        for j in range(base.size):
            bumped = [a.copy() for a in arrays]
            bumped[i].reshape(-1)[j] += eps
            up = f(bumped)
            bumped = [a.copy() for a in arrays]
            bumped[i].reshape(-1)[j] -= eps
            down = f(bumped)
            flat[j] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=FD_RTOL, atol=FD_ATOL):
    """Relative-error check with a small absolute floor for ~zero entries."""
    for a, n in zip(analytic, numeric):
        assert a is not None, "missing analytic gradient"
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)


def naive_matmul(a, b):
    """Triple-loop matrix product, the oracle for the library matmul."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out
