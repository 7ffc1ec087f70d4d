"""Finite-difference gradient checking shared by the test modules."""

import numpy as np

from avmatch.tensor import Tape, backward, zero_grads

FD_H = 1e-5
FD_RTOL = 1e-4
FD_ATOL = 1e-7


def numeric_grad(forward, x: np.ndarray, h: float = FD_H) -> np.ndarray:
    """Central finite differences of a scalar-valued forward() w.r.t. x (in place)."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = forward()
        flat[i] = orig - h
        fm = forward()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def assert_grads_close(analytic: np.ndarray, numeric: np.ndarray,
                       rtol: float = FD_RTOL, atol: float = FD_ATOL, context: str = ""):
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = np.abs(analytic - numeric) > rtol * scale + atol
    assert not bad.any(), (
        f"{context}: {bad.sum()} / {bad.size} gradient entries off; "
        f"worst analytic {analytic[bad].ravel()[:3]} vs numeric {numeric[bad].ravel()[:3]}"
    )


def check_op_gradients(build_loss, tensors, rtol: float = FD_RTOL, context: str = ""):
    """Compare tape gradients of build_loss() against finite differences.

    ``build_loss`` must rebuild the forward graph from the given tensors and
    return the scalar loss tensor; the tensors' data arrays are perturbed in
    place for the numeric side.
    """
    zero_grads(tensors)
    with Tape() as tape:
        loss = build_loss()
    backward(loss, tape)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    def scalar():
        return float(build_loss().data)

    for t, a in zip(tensors, analytic):
        n = numeric_grad(scalar, t.data)
        assert_grads_close(a, n, rtol=rtol, context=f"{context} wrt {t.data.shape}")
    zero_grads(tensors)
