"""Sensor-weight optimization of the expected posterior variance.

The objective is a randomized estimator of the posterior covariance
trace, evaluated entirely through the low-rank surrogate: one small
eigensolve per evaluation and no PDE solves.  Sparsity comes from either
an l1 penalty or a smoothed counting penalty driven to the l0 limit by a
continuation over its transition width; weights live in [0, 1] and are
optimized by a projected limited-memory quasi-Newton method.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .surrogate import hessian_factors


def default_eps_schedule(count=10):
    """Transition widths (2/3)^i, i = 1..count, for the continuation."""
    return [(2.0 / 3.0) ** i for i in range(1, count + 1)]


@dataclass
class PenaltySpec:
    """Sparsity penalty: kind 'l1' or 'smoothed_l0' with transition width eps.

    The smoothed penalty rises linearly with slope 1/eps up to eps/2,
    continues as the C1 cubic through (eps/2, 1/2) and (2 eps, 1), and is
    constant one beyond; as eps shrinks it counts nonzero weights.
    """

    kind: str
    gamma: float
    eps: float = None
    _cubic: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("l1", "smoothed_l0"):
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.gamma < 0:
            raise ValueError(f"penalty weight must be nonnegative, got {self.gamma}")
        if self.kind == "smoothed_l0":
            if self.eps is None or not 0 < self.eps:
                raise ValueError("smoothed_l0 requires a positive eps")
            a, b = self.eps / 2.0, 2.0 * self.eps
            rows = np.array(
                [
                    [1.0, a, a * a, a**3],
                    [0.0, 1.0, 2 * a, 3 * a * a],
                    [1.0, b, b * b, b**3],
                    [0.0, 1.0, 2 * b, 3 * b * b],
                ]
            )
            rhs = np.array([0.5, 1.0 / self.eps, 1.0, 0.0])
            self._cubic = np.linalg.solve(rows, rhs)


def penalty_value_grad(w, spec):
    """Raw penalty value and gradient (the multiplier gamma not applied)."""
    w = np.asarray(w, dtype=float)
    if np.any(w < -1e-9) or np.any(w > 1 + 1e-9):
        raise ValueError("weights outside [0, 1]")
    if spec.kind == "l1":
        return float(w.sum()), np.ones_like(w)
    a, b = spec.eps / 2.0, 2.0 * spec.eps
    val = np.empty_like(w)
    grad = np.zeros_like(w)
    low = w <= a
    high = w > b
    mid = ~(low | high)
    val[low] = w[low] / spec.eps
    grad[low] = 1.0 / spec.eps
    val[high] = 1.0
    t = w[mid]
    c0, c1, c2, c3 = spec._cubic
    val[mid] = c0 + t * (c1 + t * (c2 + t * c3))
    grad[mid] = c1 + t * (2 * c2 + t * 3 * c3)
    return float(val.sum()), grad


@dataclass
class TraceEstimatorSet:
    """Fixed mass-weighted white noise probes for the trace estimator."""

    z: np.ndarray  # (n, count)
    seed: int

    @classmethod
    def draw(cls, whitening, count=100, seed=93):
        return cls(z=whitening.whitened_gaussian(seed, count), seed=int(seed))

    @property
    def n_vectors(self):
        return self.z.shape[1]


class TraceObjective:
    """Randomized trace of the inverse regularized Hessian as a function
    of sensor weights.

    Construction performs one elliptic solve per probe to cache the
    half-preconditioned probes and their coordinates in the surrogate
    basis; afterwards objective and gradient cost dense linear algebra
    only.  The probe set stays fixed for the lifetime of the object, so
    repeated evaluations at the same weights return identical values.
    """

    def __init__(self, surro, prior, estimators):
        self.surro = surro
        self.prior = prior
        self.estimators = estimators
        M = surro.M
        half = prior.apply_cov_sqrt(estimators.z)
        Mhalf = M @ half
        self._coords = surro.V.T @ Mhalf  # (r, N)
        self._base = np.einsum("ij,ij->j", half, Mhalf)  # (N,)

    @property
    def n_sensors(self):
        return self.surro.n_sensors

    def _core(self, w):
        fac = hessian_factors(self.surro, w)
        c = fac.mixing.T @ self._coords
        return fac, c

    def objective(self, w):
        fac, c = self._core(w)
        reduced = self._base - np.einsum("k,kj->j", fac.shrink, c * c)
        return float(reduced.mean())

    def gradient(self, w):
        return self.objective_and_gradient(w)[1]

    def objective_and_gradient(self, w):
        fac, c = self._core(w)
        reduced = self._base - np.einsum("k,kj->j", fac.shrink, c * c)
        value = float(reduced.mean())
        # coordinates of the smoothed probes, pushed through the surrogate
        e = self._coords - fac.mixing @ (fac.shrink[:, None] * c)
        obs = self.surro.U @ (self.surro.S[:, None] * e)  # (q, N)
        obs = obs.reshape(self.surro.n_times, self.surro.n_sensors, -1)
        grad = -np.einsum("lji,lji->j", obs, obs) / self.estimators.n_vectors
        return value, grad


@dataclass
class DesignWeights:
    """Sensor weights with the penalty metadata that produced them."""

    w: np.ndarray
    gamma: float
    penalty_kind: str
    eps: float = None
    binary_tol: float = 1.0e-3
    active_threshold: float = 1.0e-3

    def active(self):
        return self.w > self.active_threshold

    @property
    def n_active(self):
        return int(np.count_nonzero(self.active()))

    def binary_deviation(self):
        return float(np.max(np.minimum(self.w, 1.0 - self.w), initial=0.0))


@dataclass
class OptimizeResult:
    weights: DesignWeights
    objective: float
    penalty: float
    n_iterations: int
    n_evaluations: int
    converged: bool
    message: str
    trace_rows: list


def projected_gradient_norm(w, grad, lo=0.0, hi=1.0):
    """Infinity norm of w - proj(w - grad), zero exactly at a KKT point."""
    return float(np.max(np.abs(w - np.clip(w - grad, lo, hi))))


def reduced_gradient_norm(w, grad, lo=0.0, hi=1.0, band=1.0e-12):
    """Infinity norm of the gradient restricted to feasible directions.

    At strictly interior points this is the plain gradient norm; at an
    active bound (within ``band`` of it), components pointing out of the
    box are dropped.  Unlike ``projected_gradient_norm`` it is not capped
    by the box width, which makes it the right reference scale for
    relative-decrease stopping rules.  Barrier methods, whose iterates
    approach but never reach the bounds, pass a wider ``band``.
    """
    g = np.array(grad, dtype=float)
    g[(w <= lo + band) & (g > 0)] = 0.0
    g[(w >= hi - band) & (g < 0)] = 0.0
    return float(np.max(np.abs(g), initial=0.0))


def optimize(
    objective,
    penalty,
    w0=None,
    max_iter=150,
    grad_reduction=1.0e4,
    memory=10,
    mode="projected",
    active_threshold=1.0e-3,
):
    """Minimize objective + gamma * penalty over the weight box.

    Terminates when the projected gradient norm has dropped below the
    initial reduced-gradient norm divided by ``grad_reduction``, or after
    ``max_iter`` iterations.  ``mode='log_barrier'`` swaps the projection
    for a logarithmic barrier with a decreasing barrier parameter; it is
    slower and exists for comparison runs.

    Returns
    -------
    OptimizeResult, with per-iteration rows
    (iteration, objective, penalty, projected gradient norm, active count).
    """
    ns = objective.n_sensors
    w0 = np.full(ns, 0.5) if w0 is None else np.asarray(w0, dtype=float)

    def merit(w):
        val, grad = objective.objective_and_gradient(w)
        pval, pgrad = penalty_value_grad(w, penalty)
        return val + penalty.gamma * pval, grad + penalty.gamma * pgrad, val, pval

    f0, g0, _, _ = merit(w0)
    pg0 = reduced_gradient_norm(w0, g0)
    pgtol = pg0 / grad_reduction if pg0 > 0 else 0.0

    rows = []
    counter = {"it": 0, "fev": 0, "hit_tol": False}

    def record(w):
        counter["it"] += 1
        fval, grad, val, pval = merit(w)
        pg = reduced_gradient_norm(w, grad)
        rows.append(
            (
                counter["it"],
                val,
                penalty.gamma * pval,
                pg,
                int(np.count_nonzero(w > active_threshold)),
            )
        )
        if pg <= pgtol:
            counter["hit_tol"] = True
            raise StopIteration

    def wrapped(w):
        counter["fev"] += 1
        fval, grad, _, _ = merit(w)
        return fval, grad

    if mode == "projected":
        # the reduced-gradient test in the callback is the stopping
        # authority; the solver's own unit-step projected-gradient test is
        # disabled because it is capped by the distance to the bounds and
        # fires spuriously for iterates hugging the box
        res = minimize(
            wrapped,
            w0,
            jac=True,
            method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * ns,
            callback=record,
            options=dict(
                maxiter=max_iter, maxcor=memory, gtol=0.0, ftol=1e-18
            ),
        )
        w_final = np.clip(res.x, 0.0, 1.0)
        n_iter = int(res.nit)
        status_ok = counter["hit_tol"]
        message = (
            "projected gradient reduced by requested factor"
            if counter["hit_tol"]
            else str(res.message)
        )
    elif mode == "log_barrier":
        # interior path following: damped quasi-Newton steps on the merit
        # plus a logarithmic barrier, with the exact barrier Hessian and a
        # dense BFGS model of the merit curvature; the barrier parameter is
        # reduced once the barrier gradient is small on its own scale, and
        # the loop exits when the barrier-free reduced gradient meets the
        # same reduction target as the projected mode
        w = np.clip(w0, 1e-3, 1.0 - 1e-3)
        fval, grad, val, pval = merit(w)
        counter["fev"] += 1
        bmat = np.eye(ns)
        scaled = False
        mu = 1.0
        # the barrier parameter equals the per-coordinate complementarity
        # gap on the central path; stopping requires it below this target
        mu_target = 1.0e-9
        ls_failures = 0
        status_ok = False
        message = "iteration limit reached"
        n_iter = 0
        for _ in range(max_iter):
            gbar = grad - mu / w + mu / (1.0 - w)
            hbar = bmat + np.diag(mu / w**2 + mu / (1.0 - w) ** 2)
            try:
                step = -np.linalg.solve(hbar, gbar)
            except np.linalg.LinAlgError:
                step = -gbar
            if float(gbar @ step) >= 0.0:
                step = -gbar
            # fraction-to-boundary rule keeps the iterate strictly interior
            alpha = 1.0
            shrink = step < 0
            if np.any(shrink):
                alpha = min(alpha, 0.995 * float(np.min(w[shrink] / -step[shrink])))
            grow = step > 0
            if np.any(grow):
                alpha = min(
                    alpha, 0.995 * float(np.min((1.0 - w[grow]) / step[grow]))
                )

            def barrier_value(wv):
                counter["fev"] += 1
                fv, gv, vv, pv = merit(wv)
                bv = fv - mu * float(np.sum(np.log(wv) + np.log(1.0 - wv)))
                return bv, fv, gv, vv, pv

            phi0 = fval - mu * float(np.sum(np.log(w) + np.log(1.0 - w)))
            slope = float(gbar @ step)
            accepted = False
            while alpha > 1.0e-14:
                w_try = w + alpha * step
                phi, f_try, g_try, v_try, p_try = barrier_value(w_try)
                if phi <= phi0 + 1.0e-4 * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # a stale curvature model can produce unusable directions;
                # drop it and retry from a fresh steepest-descent model
                ls_failures += 1
                if ls_failures > 3:
                    message = "barrier line search failed"
                    break
                bmat = np.eye(ns)
                scaled = False
                continue
            s_vec = w_try - w
            y_vec = g_try - grad
            w, fval, grad, val, pval = w_try, f_try, g_try, v_try, p_try
            stalled = float(np.max(np.abs(s_vec), initial=0.0)) < 1.0e-11
            curv = float(s_vec @ y_vec)
            # negligible steps carry rounding noise, not curvature
            if not stalled and curv > 1.0e-10 * np.linalg.norm(
                s_vec
            ) * np.linalg.norm(y_vec):
                if not scaled:
                    bmat *= float(y_vec @ y_vec) / curv
                    scaled = True
                bs = bmat @ s_vec
                sbs = float(s_vec @ bs)
                if sbs > 0.0:
                    bmat -= np.outer(bs, bs) / sbs
                bmat += np.outer(y_vec, y_vec) / curv
            n_iter += 1
            counter["it"] = n_iter
            # a coordinate sitting at w ~ mu/|g| is at its bound up to a
            # complementarity gap of mu, so the at-bound band scales with
            # mu; the stop additionally requires mu itself below target
            band = max(1.0e-12, mu / pgtol) if pgtol > 0 else 1.0e-12
            pg = reduced_gradient_norm(w, grad, band=band)
            rows.append(
                (
                    n_iter,
                    val,
                    penalty.gamma * pval,
                    pg,
                    int(np.count_nonzero(w > active_threshold)),
                )
            )
            if pg <= pgtol and mu <= mu_target:
                status_ok = True
                message = "projected gradient reduced by requested factor"
                break
            gbar = grad - mu / w + mu / (1.0 - w)
            inner_done = float(np.max(np.abs(gbar), initial=0.0)) <= max(
                mu, 0.3 * pgtol
            )
            # a stagnating line search means the current subproblem cannot
            # be improved in floating point, so move down the path as well
            if inner_done or stalled:
                mu = max(0.2 * mu, mu_target)
        w_final = np.clip(w, 0.0, 1.0)
    else:
        raise ValueError(f"unknown optimizer mode {mode!r}")

    val, grad, theta, pval = merit(w_final)
    pg_final = reduced_gradient_norm(w_final, grad)
    converged = status_ok or pg_final <= max(pgtol, 1.0e-12)
    weights = DesignWeights(
        w=w_final,
        gamma=penalty.gamma,
        penalty_kind=penalty.kind,
        eps=penalty.eps,
        active_threshold=active_threshold,
    )
    return OptimizeResult(
        weights=weights,
        objective=theta,
        penalty=pval,
        n_iterations=n_iter,
        n_evaluations=counter["fev"],
        converged=converged,
        message=message,
        trace_rows=rows,
    )


@dataclass
class ContinuationResult:
    weights: DesignWeights
    stages: list
    binary: bool
    offending: np.ndarray


def continuation_solve(
    objective,
    gamma,
    eps_schedule=None,
    w0=None,
    max_iter=150,
    grad_reduction=1.0e4,
    memory=10,
    binary_tol=1.0e-3,
    mode="projected",
):
    """l1 warm start followed by smoothed-l0 solves with shrinking eps.

    The trace estimator probes inside `objective` are shared by every
    stage.  After the last stage all weights must sit within
    ``binary_tol`` of {0, 1}; if not, the result carries binary=False and
    the indices of the offending weights.
    """
    if eps_schedule is None:
        eps_schedule = default_eps_schedule()
    stages = []
    res = optimize(
        objective,
        PenaltySpec("l1", gamma),
        w0=w0,
        max_iter=max_iter,
        grad_reduction=grad_reduction,
        memory=memory,
        mode=mode,
    )
    stages.append(("l1", None, res))
    w = res.weights.w
    for eps in eps_schedule:
        res = optimize(
            objective,
            PenaltySpec("smoothed_l0", gamma, eps=eps),
            w0=w,
            max_iter=max_iter,
            grad_reduction=grad_reduction,
            memory=memory,
            mode=mode,
        )
        stages.append(("smoothed_l0", eps, res))
        w = res.weights.w

    deviation = np.minimum(w, 1.0 - w)
    offending = np.flatnonzero(deviation > binary_tol)
    binary = offending.size == 0
    if not binary:
        warnings.warn(
            f"{offending.size} weights finished away from 0/1 "
            f"(worst deviation {deviation.max():.3e})",
            RuntimeWarning,
        )
    weights = DesignWeights(
        w=w,
        gamma=gamma,
        penalty_kind="smoothed_l0",
        eps=eps_schedule[-1],
        binary_tol=binary_tol,
        active_threshold=0.5 if binary else 1.0e-3,
    )
    return ContinuationResult(
        weights=weights, stages=stages, binary=binary, offending=offending
    )


def threshold_l1_design(w, ratio=4.0e-3):
    """Round an l1 design: keep weights strictly above ratio * total mass."""
    w = np.asarray(w, dtype=float)
    total = w.sum()
    if total <= 0:
        return np.zeros_like(w)
    return (w / total > ratio).astype(float)


def bisect_gamma(
    objective,
    target_count,
    bounds=(1.0e-2, 1.0e5),
    max_steps=24,
    **optimize_kwargs,
):
    """Find an l1 penalty weight whose thresholded design has a target size.

    Plain bisection in log gamma; the active count is monotone apart
    from optimizer noise, and the closest achievable count is returned
    when the target is skipped over.
    """
    lo, hi = bounds

    def run(gamma):
        res = optimize(objective, PenaltySpec("l1", gamma), **optimize_kwargs)
        binary = threshold_l1_design(res.weights.w)
        return int(binary.sum()), binary, res

    best = None
    c_lo, b_lo, r_lo = run(lo)
    c_hi, b_hi, r_hi = run(hi)
    for cand in ((c_lo, b_lo, r_lo, lo), (c_hi, b_hi, r_hi, hi)):
        if best is None or abs(cand[0] - target_count) < abs(best[0] - target_count):
            best = cand
    if not (c_hi <= target_count <= c_lo):
        warnings.warn(
            f"target count {target_count} outside bracket "
            f"[{c_hi}, {c_lo}] for gamma in {bounds}",
            RuntimeWarning,
        )
    for _ in range(max_steps):
        if best[0] == target_count:
            break
        mid = float(np.sqrt(lo * hi))
        c, b, r = run(mid)
        if abs(c - target_count) < abs(best[0] - target_count):
            best = (c, b, r, mid)
        if c > target_count:
            lo = mid
        elif c < target_count:
            hi = mid
        else:
            best = (c, b, r, mid)
            break
    count, binary, result, gamma = best
    return gamma, binary, result
