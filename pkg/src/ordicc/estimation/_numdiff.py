import numpy as np


def hessian_from_gradient(grad, x, rel_step=1e-4, lower=None):
    """Symmetrised finite-difference Hessian of a function given its gradient.

    Central differences with step ``rel_step * max(1, |x_i|)``; a coordinate
    whose backward step would cross ``lower[i]`` uses a forward difference.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        h = rel_step * max(1.0, abs(x[i]))
        up = x.copy()
        up[i] += h
        if lower is not None and x[i] - h < lower[i]:
            H[i] = (np.asarray(grad(up)) - np.asarray(grad(x))) / h
        else:
            down = x.copy()
            down[i] -= h
            H[i] = (np.asarray(grad(up)) - np.asarray(grad(down))) / (2.0 * h)
    return 0.5 * (H + H.T)


def inverse_if_pd(neg_hessian):
    """Inverse of a symmetric matrix, or ``None`` if it is not positive definite."""
    try:
        L = np.linalg.cholesky(neg_hessian)
    except np.linalg.LinAlgError:
        return None
    inv_L = np.linalg.solve(L, np.eye(len(L)))
    out = inv_L.T @ inv_L
    return 0.5 * (out + out.T)
