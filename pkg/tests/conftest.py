import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_gradient(loss_fn, leaf, eps_scale: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. one leaf tensor.

    Independent of the autodiff engine: only re-evaluates loss_fn while
    perturbing leaf.data in place.
    """
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        eps = eps_scale * max(1.0, abs(orig))
        flat[i] = orig + eps
        fp = float(loss_fn().data)
        flat[i] = orig - eps
        fm = float(loss_fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise relative error with a unit floor in the denominator."""
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))
