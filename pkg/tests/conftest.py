import numpy as np
import pytest

from nonsemdetect.nn import Tensor


def central_difference(f, arrays, h=1e-5):
    """Numeric gradients of scalar f(*arrays) by central differences.

    Independent of the autodiff path: re-evaluates f forward-only at
    perturbed inputs. Arrays should be float64 for a meaningful check.
    """
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f(*arrays)
            flat[i] = orig - h
            lo = f(*arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(op, arrays, rtol=1e-6, atol=1e-8, h=1e-5):
    """Backward grads of sum(op(*tensors) * R) must match central differences."""
    rng = np.random.default_rng(99)
    tensors = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    out = op(*tensors)
    r = rng.standard_normal(out.data.shape)
    (out * Tensor(r)).sum().backward()

    def scalar_f(*arrs):
        forward = op(*[Tensor(a, dtype=np.float64) for a in arrs])
        return float((forward.data * r).sum())

    numeric = central_difference(scalar_f, [t.data for t in tensors], h=h)
    for t, num in zip(tensors, numeric):
        np.testing.assert_allclose(t.grad, num, rtol=rtol, atol=atol)


def eer_oracle(bonafide, spoof):
    """Plain-python threshold sweep, independent of the package implementation.

    Same stated convention: accept when score >= theta, sweep the distinct
    scores plus one point beyond each extreme, locate the FAR-FRR crossing
    (interpolate a strict sign flip, midpoint of an exact-zero run).
    """
    bonafide = [float(b) for b in bonafide]
    spoof = [float(s) for s in spoof]
    distinct = sorted(set(bonafide + spoof))
    thresholds = [distinct[0] - 1.0] + distinct + [distinct[-1] + 1.0]

    def frr(theta):
        return sum(1 for b in bonafide if b < theta) / len(bonafide)

    def far(theta):
        return sum(1 for s in spoof if s >= theta) / len(spoof)

    rows = [(far(theta), frr(theta)) for theta in thresholds]
    diffs = [fa - fr for fa, fr in rows]
    k = next(i for i, d in enumerate(diffs) if d <= 0.0)
    if diffs[k] == 0.0:
        j = k
        while j + 1 < len(diffs) and diffs[j + 1] == 0.0:
            j += 1
        return 0.5 * (rows[k][0] + rows[j][0])
    alpha = diffs[k - 1] / (diffs[k - 1] - diffs[k])
    return rows[k - 1][0] + alpha * (rows[k][0] - rows[k - 1][0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
