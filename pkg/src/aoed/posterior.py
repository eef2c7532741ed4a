"""Posterior covariance diagnostics: traces, variances, samples, checks.

Two evaluation paths cover every operation.  The dense path assembles the
forward map column by column and works with full matrices; it is the
ground truth for small meshes.  The surrogate path expresses the
posterior as a rank-r correction of the prior and needs only elliptic
solves, never PDE solves.  Both represent operators in the nodal basis,
where the covariance of the coefficient vector is (posterior covariance
operator) times inverse mass.
"""

from dataclasses import dataclass

import numpy as np

from .surrogate import apply_inverse_hessian, expand_weights, hessian_factors


class DenseOracle:
    """Full-matrix reference implementation, capped at small meshes.

    The forward map is assembled with one forward solve per basis vector
    and scaled by the observation noise, so all downstream formulas match
    the surrogate's noise convention.
    """

    def __init__(self, fmap, cap=2000):
        n = fmap.n
        if n > cap:
            raise ValueError(f"dense oracle capped at {cap} unknowns, mesh has {n}")
        self.fmap = fmap
        self.n = n
        scale = fmap.noise_scale_vector()
        eye = np.eye(n)
        self.F = np.column_stack(
            [scale * fmap.apply(eye[:, i]) for i in range(n)]
        )
        self.M = fmap.transport.fem.M.toarray()
        self.Minv = np.linalg.inv(self.M)
        prior = fmap.prior
        Lpr = prior._L.toarray()
        A = self.Minv @ Lpr
        self.prior_precision = A @ A
        self.prior_cov = np.linalg.inv(self.prior_precision)

    def _wdiag(self, w):
        return expand_weights(
            w, self.fmap.setup.n_sensors, self.fmap.setup.n_times
        )

    def misfit_hessian(self, w):
        wd = self._wdiag(w)
        return self.Minv @ (self.F.T * wd) @ self.F

    def hessian(self, w):
        return self.misfit_hessian(w) + self.prior_precision

    def posterior_cov(self, w):
        return np.linalg.inv(self.hessian(w))

    def trace(self, w):
        return float(np.trace(self.posterior_cov(w)))

    def pointwise_variance(self, w):
        return np.einsum("ij,ji->i", self.posterior_cov(w), self.Minv)

    def apply_inverse_hessian(self, w, z):
        return np.linalg.solve(self.hessian(w), z)

    def mean(self, w, d):
        scale = self.fmap.noise_scale_vector()
        rhs = self.Minv @ (self.F.T @ (self._wdiag(w) * (scale * d)))
        return np.linalg.solve(self.hessian(w), rhs)


@dataclass
class BayesRiskResult:
    mc_estimate: float
    trace_value: float
    z_score: float
    stderr: float
    algebraic_residual: float


class PosteriorModel:
    """Posterior diagnostics for one design, dense or surrogate backed.

    Parameters
    ----------
    fmap : ForwardMap (must carry a prior)
    whitening : WhiteningOperator
    w : per-sensor weights in [0, 1]
    surro : LowRankSurrogate or None
    mode : 'auto' | 'dense' | 'surrogate'
        auto picks surrogate when factors are supplied, else dense.
    """

    def __init__(self, fmap, whitening, w, surro=None, mode="auto", dense_cap=2000):
        if mode == "auto":
            mode = "surrogate" if surro is not None else "dense"
        if mode == "surrogate" and surro is None:
            raise ValueError("surrogate mode requires surrogate factors")
        self.mode = mode
        self.fmap = fmap
        self.prior = fmap.prior
        self.whitening = whitening
        self.surro = surro
        self.dense_cap = dense_cap
        self.w = np.asarray(w, dtype=float)
        expand_weights(self.w, fmap.setup.n_sensors, fmap.setup.n_times)
        self._dense = None
        if mode == "surrogate":
            self._factors = hessian_factors(surro, self.w)
            # half-preconditioned eigenvectors, reused by every diagnostic
            self._half = self.prior.apply_cov_sqrt(self._factors.vectors)
        else:
            self._factors = None
            self._half = None

    def dense(self):
        if self._dense is None:
            self._dense = DenseOracle(self.fmap, cap=self.dense_cap)
        return self._dense

    def exact_trace(self):
        """Trace of the posterior covariance operator."""
        if self.mode == "dense":
            return self.dense().trace(self.w)
        M = self.fmap.transport.fem.M
        correction = np.einsum(
            "k,ik,ik->", self._factors.shrink, self._half, M @ self._half
        )
        return self.prior.covariance_trace(self.dense_cap) - float(correction)

    def pointwise_variance(self):
        """Marginal posterior variance at every node."""
        if self.mode == "dense":
            return self.dense().pointwise_variance(self.w)
        base = self.prior.pointwise_variance(self.dense_cap)
        correction = (self._half * self._half) @ self._factors.shrink
        return base - correction

    def apply_inverse_hessian(self, z):
        if self.mode == "dense":
            return self.dense().apply_inverse_hessian(self.w, z)
        M = self.fmap.transport.fem.M
        _, q = apply_inverse_hessian(self._factors, self.prior, M, z)
        return q

    def mean(self, d):
        """Posterior mean from observations d (one adjoint solve)."""
        d = np.asarray(d, dtype=float)
        if self.mode == "dense":
            return self.dense().mean(self.w, d)
        scale = self.fmap.noise_scale_vector()
        wdiag = expand_weights(
            self.w, self.fmap.setup.n_sensors, self.fmap.setup.n_times
        )
        rhs = self.fmap.apply_adjoint(scale * (wdiag * (scale * d)))
        return self.apply_inverse_hessian(rhs)

    def sample(self, count, seed):
        """Centered posterior samples, (n, count); prior samples at w = 0.

        Uses the square-root factor of the rank-r corrected covariance, so
        the sample covariance converges to the posterior covariance.
        """
        if self.mode != "surrogate":
            raise ValueError("sampling requires surrogate mode")
        rng = np.random.default_rng(seed)
        y = rng.standard_normal((self.fmap.n, count))
        t = self.whitening.apply(y)
        M = self.fmap.transport.fem.M
        damp = 1.0 - 1.0 / np.sqrt(1.0 + self._factors.eigvals)
        c = self._factors.vectors.T @ (M @ t)
        t = t - self._factors.vectors @ (damp[:, None] * c)
        return self.prior.apply_cov_sqrt(t)

    def bayes_risk_check(self, n_outer=2000, n_inner=1, seed=0):
        """Check trace(posterior cov) against the mean squared error.

        (a) algebraic: the two quadratic trace terms must add up to the
        posterior trace; (b) Monte Carlo: the squared mass-norm error of
        the posterior mean over prior draws and noisy data must match the
        trace within sampling error.  Dense mode only.
        """
        if self.mode != "dense":
            raise ValueError("bayes_risk_check requires dense mode")
        oracle = self.dense()
        cov = oracle.posterior_cov(self.w)
        cov2 = cov @ cov
        t_mis = float(np.trace(cov2 @ oracle.misfit_hessian(self.w)))
        t_pr = float(np.trace(cov2 @ oracle.prior_precision))
        tr = float(np.trace(cov))
        residual = abs(t_mis + t_pr - tr) / abs(tr)

        rng = np.random.default_rng(seed)
        wsqrt = np.sqrt(self._wdiag_dense())
        liso = self.whitening.apply(np.eye(self.fmap.n))
        sqrt_prior = np.linalg.solve(
            self.prior._L.toarray(), oracle.M
        )  # dense covariance square root
        proj = cov @ oracle.Minv @ (oracle.F.T * wsqrt)
        vals = np.empty(n_outer)
        for i in range(n_outer):
            m = sqrt_prior @ (liso @ rng.standard_normal(self.fmap.n))
            errs = 0.0
            for _ in range(n_inner):
                noisy = wsqrt * (oracle.F @ m) + rng.standard_normal(
                    self.fmap.n_obs
                )
                diff = proj @ noisy - m
                errs += float(diff @ (oracle.M @ diff))
            vals[i] = errs / n_inner
        mc = float(vals.mean())
        stderr = float(vals.std(ddof=1) / np.sqrt(n_outer))
        z = (mc - tr) / stderr if stderr > 0 else 0.0
        return BayesRiskResult(
            mc_estimate=mc,
            trace_value=tr,
            z_score=float(z),
            stderr=stderr,
            algebraic_residual=float(residual),
        )

    def _wdiag_dense(self):
        return expand_weights(
            self.w, self.fmap.setup.n_sensors, self.fmap.setup.n_times
        )


def export_variance_csv(path, mesh, values):
    """Write the nodal variance field: node_index, x, y, variance."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != mesh.n_nodes:
        raise ValueError(
            f"variance vector has {values.shape[0]} entries for "
            f"{mesh.n_nodes} nodes"
        )
    with open(path, "w", encoding="utf-8") as f:
        f.write("node_index,x,y,variance\n")
        for i, ((x, y), v) in enumerate(zip(mesh.nodes, values)):
            f.write(f"{i},{x:.17g},{y:.17g},{v:.17g}\n")
