"""Gaussian smoothness prior built from a squared elliptic operator.

The covariance is the inverse square of A = M^{-1} (alpha K + beta M) with
natural boundary conditions, so its square root application is one solve
with the sparse operator alpha K + beta M followed by a mass multiply.
Constants are eigenvectors: the covariance maps a constant c to c/beta^2,
which is also its largest eigenvalue.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import FactorizationError


@dataclass
class PriorOperator:
    fem: object
    alpha: float = 8.0e-3
    beta: float = 1.0e-2
    mean: np.ndarray = None
    _solve: object = field(default=None, repr=False, compare=False)
    _dense_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError(
                f"prior coefficients must be positive, got alpha={self.alpha}, "
                f"beta={self.beta}"
            )
        if self.mean is None:
            self.mean = np.zeros(self.fem.n)
        self._L = (self.alpha * self.fem.K + self.beta * self.fem.M).tocsc()
        try:
            self._solve = spla.factorized(self._L)
        except RuntimeError as exc:
            raise FactorizationError(
                f"prior operator factorization failed (SPD violation?): {exc}"
            )

    def _solve_cols(self, b):
        if b.ndim == 1:
            return self._solve(b)
        return np.column_stack([self._solve(col) for col in b.T])

    def apply_cov_sqrt(self, v):
        """Covariance square root: solve (alpha K + beta M) x = M v.

        Self-adjoint in the mass-weighted inner product, so it doubles as
        the adjoint square root.
        """
        return self._solve_cols(self.fem.M @ v)

    def apply_cov(self, v):
        return self.apply_cov_sqrt(self.apply_cov_sqrt(v))

    def apply_precision_sqrt(self, v):
        """Inverse of apply_cov_sqrt: x = M^{-1} (alpha K + beta M) v."""
        return self.fem.mass_solve(self._L @ v)

    def apply_precision(self, v):
        return self.apply_precision_sqrt(self.apply_precision_sqrt(v))

    def sample(self, whitening, seed, count=1):
        """Draw prior samples as mean + cov_sqrt(whitened noise).

        Returns an (n, count) array.
        """
        z = whitening.whitened_gaussian(seed, count)
        return self.mean[:, None] + self.apply_cov_sqrt(z)

    # dense service routines, usable while a full matrix of size n fits

    def _dense_factors(self, cap=2000):
        n = self.fem.n
        if n > cap:
            raise ValueError(
                f"dense prior computations capped at {cap} unknowns, mesh has {n}"
            )
        if "X" not in self._dense_cache:
            # X is the covariance square root as a dense matrix
            X = self._solve(self.fem.M.toarray())
            self._dense_cache["X"] = X
        return self._dense_cache["X"]

    def covariance_trace(self, cap=2000):
        """Exact trace of the covariance operator (dense, cached)."""
        if "trace" not in self._dense_cache:
            X = self._dense_factors(cap)
            self._dense_cache["trace"] = float(np.sum(X * X.T))
        return self._dense_cache["trace"]

    def pointwise_variance(self, cap=2000):
        """Nodal marginal variances of the prior (dense, cached)."""
        if "pointvar" not in self._dense_cache:
            X = self._dense_factors(cap)
            # variance_i = (X Linv)_{ii} with Linv = inverse of alpha K + beta M
            Y = self._solve(X.T)
            self._dense_cache["pointvar"] = np.einsum("ii->i", Y.T).copy()
        return self._dense_cache["pointvar"]
