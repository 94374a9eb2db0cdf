import numpy as np
import pytest

from deeptensor.autograd import Tensor


def numeric_grad(fn, arrays, wrt, h=1e-6):
    """Central-difference gradient of scalar fn wrt arrays[wrt].

    fn receives plain numpy arrays and returns a float; this stays
    independent of the autograd path it is used to check.
    """
    base = [a.copy() for a in arrays]
    g = np.zeros_like(base[wrt])
    flat = base[wrt].ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(*base)
        flat[i] = orig - h
        fm = fn(*base)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom


def check_grads(build_loss, arrays, tol=1e-5, h=1e-6):
    """Compare tape gradients of build_loss against central differences.

    build_loss maps Tensors (all requires_grad) to a scalar loss Tensor.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    loss.backward()

    def scalar_fn(*arrs):
        ts = [Tensor(a) for a in arrs]
        return build_loss(*ts).item()

    worst = 0.0
    for i, t in enumerate(tensors):
        num = numeric_grad(scalar_fn, arrays, i, h=h)
        worst = max(worst, rel_err(t.grad, num))
    assert worst < tol, f"gradient mismatch: max relative error {worst:.3g}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
