"""Central finite-difference gradient checking."""

import numpy as np


def numeric_grad(f, arr, eps=1e-3, index=None):
    """d f() / d arr by central differences, perturbing ``arr`` in place.

    ``index`` restricts the check to a list of flat indices; the returned
    array is then 1-D and aligned with ``index``.
    """
    flat = arr.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = []
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        out.append((fp - fm) / (2.0 * eps))
    out = np.array(out)
    return out.reshape(arr.shape) if index is None else out


def rel_error(analytic, numeric):
    """Norm-wise relative error ||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(fn, arrays, rng, eps=1e-4, max_entries=24):
    """Largest relative error between backprop and central differences.

    ``fn`` maps Tensors built from ``arrays`` (float64, perturbed in place)
    to an output Tensor; the scalar under test is ``sum(out * G)`` with a
    fixed random ``G``. Arrays larger than ``max_entries`` are checked on a
    random subset of entries.
    """
    from lfcodec.nd import tensor as T

    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    leaves = [T.Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    weights = rng.normal(size=out.shape)
    T.tsum(out * weights).backward()

    def scalar():
        with T.no_grad():
            return float(np.sum(fn(*[T.Tensor(a) for a in arrays]).data * weights))

    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        analytic = np.zeros(arr.shape) if leaf.grad is None else leaf.grad
        if arr.size > max_entries:
            idx = rng.choice(arr.size, max_entries, replace=False)
            worst = max(worst, rel_error(analytic.reshape(-1)[idx], numeric_grad(scalar, arr, eps, idx)))
        else:
            worst = max(worst, rel_error(analytic, numeric_grad(scalar, arr, eps)))
    return worst
