"""Independent oracles the tests check the library against.

Nothing here imports from hnf's solver internals: the normal-equations
oracle inverts the Gram matrix by Gauss-Jordan elimination in extended
precision, the constrained solver is reproduced by bisecting the
Lagrange multiplier, and the budget formula is evaluated with the
collapse matrix explicitly materialized.
"""

import numpy as np
import scipy.fft


def gauss_jordan_inverse(a: np.ndarray) -> np.ndarray:
    """Matrix inverse via partial-pivot Gauss-Jordan in longdouble."""
    a = np.array(a, dtype=np.longdouble)
    n = a.shape[0]
    aug = np.hstack([a, np.eye(n, dtype=np.longdouble)])
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if aug[piv, col] == 0:
            raise ZeroDivisionError("singular matrix")
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] = aug[col] / aug[col, col]
        for r in range(n):
            if r != col:
                aug[r] = aug[r] - aug[r, col] * aug[col]
    return aug[:, n:]


def normal_equations_extended(y: np.ndarray, t: np.ndarray,
                              ridge: float = 0.0) -> np.ndarray:
    """O = T Y^T (Y Y^T + ridge I)^-1 computed in extended precision."""
    y = np.array(y, dtype=np.longdouble)
    t = np.array(t, dtype=np.longdouble)
    g = y @ y.T
    if ridge:
        g = g + np.longdouble(ridge) * np.eye(g.shape[0], dtype=np.longdouble)
    o = t @ y.T @ gauss_jordan_inverse(g)
    return o.astype(np.float64)


def sample_cost(t: np.ndarray, o: np.ndarray, y: np.ndarray) -> float:
    r = t - o @ y
    return float(np.sum(r * r) / t.shape[1])


def constrained_ls_oracle(y: np.ndarray, t: np.ndarray, eps: float,
                          bisect_iters: int = 300) -> tuple[np.ndarray, float]:
    """Ball-constrained least squares via bisection on the multiplier.

    Stationarity gives O(lam) = (2/N) T Y^T ((2/N) Y Y^T + lam I)^-1 with
    ||O(lam)||_F^2 strictly decreasing in lam; the optimum is O(0) if
    feasible, else the lam with ||O(lam)||_F^2 = eps.
    """
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n = y.shape[1]
    scale = 2.0 / n
    g = scale * (y @ y.T)
    b = scale * (t @ y.T)

    def o_of(lam: float) -> np.ndarray:
        m = g.copy()
        m[np.diag_indices_from(m)] += lam
        return np.linalg.solve(m, b.T).T

    o0 = b @ np.linalg.pinv(g, hermitian=True)
    if float(np.sum(o0 * o0)) <= eps:
        return o0, sample_cost(t, o0, y)

    lo, hi = 0.0, 1.0
    while float(np.sum(o_of(hi) ** 2)) > eps:
        hi *= 2.0
        if hi > 1e18:
            raise RuntimeError("bisection bracket failed")
    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        if float(np.sum(o_of(mid) ** 2)) > eps:
            lo = mid
        else:
            hi = mid
    o = o_of(hi)
    return o, sample_cost(t, o, y)


def epsilon_materialized(o_prev: np.ndarray, w: np.ndarray) -> float:
    """||O_prev pinv(W) U||_F^2 with the collapse matrix U built densely."""
    n = w.shape[0]
    u = np.hstack([np.eye(n), -np.eye(n)])
    m = o_prev @ np.linalg.pinv(w) @ u
    return float(np.sum(m * m))


def dct_ii_matrix_oracle(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix via scipy.fft (independent construction)."""
    return scipy.fft.dct(np.eye(n), type=2, norm="ortho", axis=0)
