"""Low-rank factorization of the preconditioned observable map.

A randomized range finder with oversampling and power iterations captures
the dominant singular triplets of the (noise-scaled, prior-preconditioned)
map.  All parameter-side orthonormalizations use the mass-weighted inner
product, so the right factor satisfies V^T M V = I and singular values are
discretization-consistent.

After construction the surrogate supports the two operations the design
loop needs with no PDE solves at all: eigenfactors of the weighted misfit
Hessian for any sensor weights, and application of the resulting inverse
Hessian through a rank-r correction of the prior.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = 1


@dataclass
class LowRankSurrogate:
    """Factors U S V^T M of the preconditioned map, plus build metadata."""

    U: np.ndarray  # (q, r), orthonormal columns
    S: np.ndarray  # (r,), descending positive
    V: np.ndarray  # (n, r), mass-orthonormal columns
    M: object  # sparse mass matrix used for parameter-side inner products
    n_sensors: int
    n_times: int
    meta: dict

    @property
    def rank(self):
        return self.S.shape[0]

    def apply(self, v):
        """U S V^T M v: the surrogate's forward action (no PDE solves)."""
        return self.U @ (self.S * (self.V.T @ (self.M @ v)))

    def apply_adjoint(self, d):
        """V S U^T d: the mass-weighted adjoint of `apply`."""
        return self.V @ (self.S * (self.U.T @ d))


def _orthonormalize_m(Z, M):
    """Orthonormalize columns in the M inner product via the Gram factor.

    Falls back to a spectral factorization when the block is numerically
    rank deficient, dropping the null directions.
    """
    G = Z.T @ (M @ Z)
    G = (G + G.T) / 2.0
    try:
        R = np.linalg.cholesky(G)
        return np.linalg.solve(R, Z.T).T
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(G)
        keep = vals > 1.0e-14 * vals.max()
        return (Z @ vecs[:, keep]) / np.sqrt(vals[keep])


def build_surrogate(
    fmap,
    whitening,
    rank=60,
    oversampling=10,
    power_iters=1,
    seed=2024,
    residual_tol=1.0e-3,
    preconditioned=True,
    check_probes=3,
):
    """Randomized SVD of the forward map in the mass-weighted geometry.

    Parameters
    ----------
    fmap : ForwardMap
    whitening : WhiteningOperator
        Supplies probe directions that are white in the M inner product
        and the change of variables that reduces the small SVD to a
        Euclidean one.
    rank, oversampling : int
        Retained rank r and extra probes p; r + p must not exceed
        min(n_obs, n).
    power_iters : int
        Subspace iteration count; each costs one extra forward and one
        extra adjoint pass over the probe block.
    preconditioned : bool
        When False, factorize the raw map instead of the preconditioned
        one (used for spectrum comparisons).  Noise scaling still applies.

    Returns
    -------
    LowRankSurrogate
    """
    n, q = fmap.n, fmap.n_obs
    r, p = int(rank), int(oversampling)
    if r < 1:
        raise ValueError(f"rank must be positive, got {r}")
    if r + p > min(q, n):
        raise ValueError(
            f"rank+oversampling = {r + p} exceeds min(n_obs, n) = {min(q, n)}"
        )
    scale = fmap.noise_scale_vector()
    if preconditioned:
        fwd = lambda v: scale * fmap.apply_preconditioned(v)
        adj = lambda d: fmap.apply_preconditioned_adjoint(scale * d)
    else:
        fwd = lambda v: scale * fmap.apply(v)
        adj = lambda d: fmap.apply_adjoint(scale * d)
    M = fmap.transport.fem.M

    probes = whitening.whitened_gaussian(seed, r + p)
    Y = np.column_stack([fwd(probes[:, i]) for i in range(r + p)])
    Q, _ = np.linalg.qr(Y)
    for _ in range(int(power_iters)):
        Z = np.column_stack([adj(Q[:, i]) for i in range(Q.shape[1])])
        Z = _orthonormalize_m(Z, M)
        Y = np.column_stack([fwd(Z[:, i]) for i in range(Z.shape[1])])
        Q, _ = np.linalg.qr(Y)

    # the adjoint returns mass-weighted vectors; multiplying by M recovers
    # the plain transpose rows, and the whitening transpose moves them into
    # coordinates where the small SVD is Euclidean
    C = np.column_stack([adj(Q[:, i]) for i in range(Q.shape[1])])
    B = whitening.apply_transpose(M @ C)
    Vw, sig, Uh = np.linalg.svd(B, full_matrices=False)
    U = Q @ Uh.T
    V = whitening.apply(Vw)

    keep = sig > 0.0
    if not keep.all():
        sig, U, V, Vw = sig[keep], U[:, keep], V[:, keep], Vw[:, keep]
    r_eff = int(np.sum(sig > 1.0e-12 * sig[0]))
    if r_eff < r:
        warnings.warn(
            f"requested rank {r} but effective rank is {r_eff}; "
            "trailing singular values are at roundoff level",
            RuntimeWarning,
        )
    sig, U, V = sig[:r], U[:, :r], V[:, :r]

    surro = LowRankSurrogate(
        U=U,
        S=sig,
        V=V,
        M=M,
        n_sensors=fmap.setup.n_sensors,
        n_times=fmap.setup.n_times,
        meta={
            "version": FORMAT_VERSION,
            "rank": int(sig.shape[0]),
            "requested_rank": r,
            "oversampling": p,
            "power_iters": int(power_iters),
            "seed": int(seed),
            "preconditioned": bool(preconditioned),
            "effective_rank": r_eff,
            "n": n,
            "n_obs": q,
        },
    )

    if check_probes > 0:
        rng_seed = seed + 1 if isinstance(seed, int) else seed
        fresh = whitening.whitened_gaussian(rng_seed, check_probes)
        rels = []
        for i in range(check_probes):
            exact = fwd(fresh[:, i])
            approx = surro.apply(fresh[:, i])
            rels.append(
                float(np.linalg.norm(exact - approx) / np.linalg.norm(exact))
            )
        surro.meta["residual"] = max(rels)
        if max(rels) > residual_tol:
            warnings.warn(
                f"surrogate residual {max(rels):.3e} exceeds tolerance "
                f"{residual_tol:.1e}; consider a larger rank",
                RuntimeWarning,
            )
    return surro


@dataclass
class HessianFactors:
    """Mass-orthonormal eigenpairs of the weighted data-misfit Hessian.

    `shrink` holds eigval/(1+eigval), the diagonal of the rank-r
    correction in the inverse-Hessian identity; `mixing` is the small
    rotation from the surrogate's right singular basis to the eigenbasis.
    """

    vectors: np.ndarray  # (n, r)
    eigvals: np.ndarray  # (r,) nonnegative, descending
    shrink: np.ndarray  # (r,)
    mixing: np.ndarray  # (r, r)


def expand_weights(w, n_sensors, n_times):
    """Per-sensor weights to the time-major per-observation diagonal."""
    w = np.asarray(w, dtype=float)
    if w.shape != (n_sensors,):
        raise ValueError(f"expected {n_sensors} weights, got shape {w.shape}")
    if np.any(w < -1e-12) or np.any(w > 1 + 1e-12):
        raise ValueError("sensor weights must lie in [0, 1]")
    return np.tile(np.clip(w, 0.0, 1.0), n_times)


def hessian_factors(surro, w):
    """Eigendecomposition of the weighted misfit Hessian at weights w.

    Costs one dense r x r eigensolve; no PDE solves.
    """
    wdiag = expand_weights(w, surro.n_sensors, surro.n_times)
    T = surro.U * wdiag[:, None]
    G = (surro.S[:, None] * (surro.U.T @ T)) * surro.S[None, :]
    vals, P = np.linalg.eigh((G + G.T) / 2.0)
    vals = np.clip(vals[::-1], 0.0, None)
    P = P[:, ::-1]
    shrink = vals / (1.0 + vals)
    return HessianFactors(
        vectors=surro.V @ P, eigvals=vals, shrink=shrink, mixing=P
    )


def apply_inverse_hessian(factors, prior, M, z):
    """Apply the inverse of (misfit Hessian + prior precision) to z.

    Returns the pair (q_hat, q): q_hat is the preconditioned solution
    (I - V shrink V^T M) cov_sqrt(z) and q = cov_sqrt(q_hat) the nodal
    one.  Two elliptic solves, no PDE solves.
    """
    s1 = prior.apply_cov_sqrt(z)
    c = factors.vectors.T @ (M @ s1)
    q_hat = s1 - factors.vectors @ (factors.shrink * c)
    return q_hat, prior.apply_cov_sqrt(q_hat)


def save_surrogate(path, surro):
    """Versioned binary dump of the factors and metadata."""
    np.savez(
        path,
        version=np.array([FORMAT_VERSION]),
        U=surro.U,
        S=surro.S,
        V=surro.V,
        n_sensors=np.array([surro.n_sensors]),
        n_times=np.array([surro.n_times]),
        meta=np.frombuffer(json.dumps(surro.meta).encode(), dtype=np.uint8),
    )


def load_surrogate(path, M):
    """Load a dump written by save_surrogate; M must match the mesh."""
    with np.load(path) as data:
        version = int(data["version"][0])
        if version != FORMAT_VERSION:
            raise ValueError(
                f"surrogate file version {version} unsupported "
                f"(expected {FORMAT_VERSION})"
            )
        meta = json.loads(bytes(data["meta"]).decode())
        surro = LowRankSurrogate(
            U=data["U"],
            S=data["S"],
            V=data["V"],
            M=M,
            n_sensors=int(data["n_sensors"][0]),
            n_times=int(data["n_times"][0]),
            meta=meta,
        )
    if M.shape[0] != surro.V.shape[0]:
        raise ValueError(
            f"mass matrix size {M.shape[0]} does not match surrogate "
            f"parameter dimension {surro.V.shape[0]}"
        )
    return surro
