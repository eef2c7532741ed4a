"""Isomorphism between Euclidean white noise and mass-weighted white noise.

The map L = D^{-1/2} S^{-1/2} built here satisfies L^T M L = I, where D is
the lumped (row-sum) mass diagonal and S = D^{-1/2} M D^{-1/2}.  Applying
L to an iid standard normal vector yields noise that is white with respect
to the mass-weighted inner product, which is what both the trace estimator
and the sampling routines consume.

S has spectrum clustered around one, so S^{-1/2} is applied either exactly
(dense eigendecomposition, small problems) or with a fixed-degree Chebyshev
polynomial in S (matrix-free, any size).
"""

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import chebyshev

from .errors import WhiteningConvergenceError

# The element matrix of the (consistent, lumped) mass pencil on a linear
# triangle has eigenvalues {1/4, 1/4, 1} for every triangle shape, so the
# assembled S = D^{-1/2} M D^{-1/2} always has spectrum inside [1/4, 1]
# (both ends are attained in practice).  A hair of margin keeps the
# Chebyshev map well conditioned at the interval ends.
_PENCIL_BOUNDS = (0.2499, 1.0001)


class WhiteningOperator:
    """Applies the noise isomorphism and draws mass-weighted white noise.

    Parameters
    ----------
    fem : FemOperators
    mode : 'auto' | 'dense' | 'iterative'
        'auto' picks dense up to ``dense_cap`` unknowns.
    degree : int
        Polynomial degree (= number of S applications) in iterative mode.
    check_tol : float or None
        Setup-time self check: applying the inverse square root twice and
        multiplying by S must reproduce a probe vector to this relative
        residual.  None disables the check.
    """

    def __init__(self, fem, mode="auto", degree=10, dense_cap=2000, check_tol=1e-3):
        self.fem = fem
        n = fem.n
        if mode == "auto":
            mode = "dense" if n <= dense_cap else "iterative"
        if mode not in ("dense", "iterative"):
            raise ValueError(f"unknown whitening mode {mode!r}")
        self.mode = mode
        self.degree = int(degree)
        self._dinv_sqrt = 1.0 / np.sqrt(fem.lumped)
        d = sp.diags(self._dinv_sqrt)
        self._S = (d @ fem.M @ d).tocsr()
        if mode == "dense":
            vals, vecs = np.linalg.eigh(self._S.toarray())
            if vals.min() <= 0:
                raise WhiteningConvergenceError(
                    f"scaled mass matrix is not positive definite ({vals.min():.3e})"
                )
            self._inv_sqrt_dense = (vecs / np.sqrt(vals)) @ vecs.T
        else:
            self._coeffs, self._interval = self._chebyshev_setup()
        if check_tol is not None:
            self._self_check(check_tol)

    def _chebyshev_setup(self):
        lo, hi = _PENCIL_BOUNDS

        def target(u):
            return 1.0 / np.sqrt(0.5 * (hi - lo) * u + 0.5 * (hi + lo))

        # Clenshaw evaluation of a degree-d Chebyshev series costs exactly
        # d products with S, so the polynomial degree equals `degree`.
        return chebyshev.chebinterpolate(target, max(self.degree, 1)), (lo, hi)

    def _apply_inv_sqrt_s(self, y):
        if self.mode == "dense":
            return self._inv_sqrt_dense @ y
        lo, hi = self._interval
        c = self._coeffs
        scale = 2.0 / (hi - lo)
        shift = (hi + lo) / (hi - lo)

        def op(v):
            return scale * (self._S @ v) - shift * v

        # Clenshaw recurrence on vectors, one S application per step;
        # seeding with the leading coefficient avoids an S product against
        # an all-zero vector, so a degree-d series costs exactly d products
        b1 = c[-1] * y
        b2 = np.zeros_like(y)
        for cj in c[-2:0:-1]:
            b1, b2 = cj * y + 2.0 * op(b1) - b2, b1
        return c[0] * y + op(b1) - b2

    def _self_check(self, tol):
        rng = np.random.default_rng(1905)
        y = rng.standard_normal(self.fem.n)
        z = self._apply_inv_sqrt_s(self._apply_inv_sqrt_s(y))
        res = np.linalg.norm(self._S @ z - y) / np.linalg.norm(y)
        if res > tol:
            raise WhiteningConvergenceError(
                f"inverse square root self test failed: residual {res:.3e} > {tol:.1e}"
            )
        self.check_residual = res

    def apply(self, y):
        """Map iid standard normal coordinates to mass-weighted white noise."""
        y = np.asarray(y, dtype=float)
        return self._dinv_sqrt.reshape(-1, *([1] * (y.ndim - 1))) * (
            self._apply_inv_sqrt_s(y)
        )

    def apply_transpose(self, x):
        x = np.asarray(x, dtype=float)
        return self._apply_inv_sqrt_s(
            self._dinv_sqrt.reshape(-1, *([1] * (x.ndim - 1))) * x
        )

    def whitened_gaussian(self, seed, count=1):
        """Draw ``count`` mass-weighted white noise vectors, shape (n, count)."""
        rng = np.random.default_rng(seed)
        y = rng.standard_normal((self.fem.n, count))
        return self.apply(y)
