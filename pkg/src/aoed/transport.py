"""Implicit-Euler advection-diffusion solver and its discrete adjoint.

The forward problem evolves an initial condition under diffusion plus a
stationary velocity field with no-flux outer boundaries.  The adjoint is
the exact transpose of the discrete forward-plus-observation map, which
is what the optimization layer requires: the pairing
``obs . F(m) == inner_M(m, adjoint(obs))`` holds to solver precision.
"""

import numpy as np
import scipy.sparse.linalg as spla

from .errors import AssemblyError, FactorizationError
from .fem import advection_matrix

KAPPA_FLOOR = 1.0e-4


def time_interp_weights(dt, n_steps, times):
    """Bracketing step indices and weights for instants on a uniform grid.

    Each time t maps to (k, theta) with t = (k + theta) dt, 0 <= theta < 1,
    clamped so k+1 never exceeds n_steps.  Both the forward interpolation
    and the adjoint load distribution use these same weights, which keeps
    the two maps exact transposes.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < -1e-12) or np.any(times > n_steps * dt * (1 + 1e-12)):
        raise ValueError("observation times fall outside the time grid")
    pos = times / dt
    k = np.minimum(pos.astype(int), n_steps - 1)
    theta = pos - k
    return k, theta


def _gyre_velocity(xy, holes, scale=1.0, cutoff=0.08):
    """Stationary recirculating field, zeroed smoothly at hole boundaries.

    The base field (-sin(pi x) cos(pi y), cos(pi x) sin(pi y)) is
    divergence free and tangential on the outer square; near each hole it
    is multiplied by a cubic ramp in the distance to the hole so the flow
    vanishes on building walls.  Peak speed is `scale`.
    """
    x, y = xy[:, 0], xy[:, 1]
    vx = -np.sin(np.pi * x) * np.cos(np.pi * y)
    vy = np.cos(np.pi * x) * np.sin(np.pi * y)
    mask = np.ones_like(x)
    for r in holes:
        d = r.distance(x, y) / cutoff
        t = np.clip(d, 0.0, 1.0)
        mask = mask * (t * t * (3.0 - 2.0 * t))
    return scale * np.column_stack([vx * mask, vy * mask])


class VelocityField:
    """Nodal velocity data, from the built-in analytic field or a file."""

    def __init__(self, kind, values=None, scale=1.0, cutoff=0.08):
        self.kind = kind
        self.values = values
        self.scale = scale
        self.cutoff = cutoff

    @classmethod
    def analytic(cls, scale=1.0, cutoff=0.08):
        return cls("analytic", scale=scale, cutoff=cutoff)

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def from_file(cls, path):
        vals = np.loadtxt(path, dtype=float, ndmin=2)
        if vals.shape[1] != 2:
            raise AssemblyError(
                f"velocity file {path} must have two columns, got {vals.shape[1]}"
            )
        return cls("file", values=vals)

    def at_nodes(self, mesh):
        if self.kind == "zero":
            return np.zeros((mesh.n_nodes, 2))
        if self.kind == "analytic":
            return _gyre_velocity(mesh.nodes, mesh.holes, self.scale, self.cutoff)
        if self.kind == "file":
            if self.values.shape[0] != mesh.n_nodes:
                raise AssemblyError(
                    f"velocity file has {self.values.shape[0]} rows, mesh has "
                    f"{mesh.n_nodes} nodes"
                )
            return self.values
        raise ValueError(f"unknown velocity kind {self.kind!r}")


class TransportOperators:
    """Time stepping operators for one mesh/velocity/diffusivity triple.

    One sparse factorization of the implicit-Euler step matrix is reused
    across all forward and adjoint solves; the instance keeps counters of
    both so callers can assert how many PDE solves a phase consumed.
    """

    def __init__(
        self,
        mesh,
        fem,
        velocity,
        kappa=1.0e-3,
        t_final=4.0,
        n_steps=64,
        allow_low_kappa=False,
    ):
        if kappa < KAPPA_FLOOR and not allow_low_kappa:
            raise ValueError(
                f"kappa={kappa:g} below stability floor {KAPPA_FLOOR:g}; "
                "set allow_low_kappa to override"
            )
        if t_final <= 0 or n_steps < 1:
            raise ValueError("t_final must be positive and n_steps at least 1")
        self.mesh = mesh
        self.fem = fem
        self.kappa = float(kappa)
        self.t_final = float(t_final)
        self.n_steps = int(n_steps)
        self.dt = self.t_final / self.n_steps
        self.velocity_nodes = velocity.at_nodes(mesh)
        C = advection_matrix(mesh, self.velocity_nodes)
        step = fem.M + self.dt * (self.kappa * fem.K + C)
        try:
            self._step_lu = spla.splu(step.tocsc())
        except RuntimeError as exc:
            raise FactorizationError(f"time step factorization failed: {exc}")
        self.n_forward_solves = 0
        self.n_adjoint_solves = 0

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def forward_solve(self, m):
        """March the initial condition forward; returns (n_steps+1, n) states."""
        m = np.asarray(m, dtype=float)
        traj = np.empty((self.n_steps + 1, self.fem.n))
        traj[0] = m
        for k in range(self.n_steps):
            traj[k + 1] = self._step_lu.solve(self.fem.M @ traj[k])
            if not np.all(np.isfinite(traj[k + 1])):
                raise FloatingPointError(
                    f"non-finite state after time step {k + 1}"
                )
        self.n_forward_solves += 1
        return traj

    def adjoint_solve(self, loads, times):
        """Exact transpose of forward_solve composed with time interpolation.

        Parameters
        ----------
        loads : (k, n) array
            One nodal load vector per observation instant (already scattered
            in space by the caller).
        times : (k,) array
            Observation instants inside [0, t_final].

        Returns
        -------
        (n,) array: the mass-weighted adjoint state at time zero, i.e.
        M^{-1} F^T applied to the loads.
        """
        loads = np.atleast_2d(np.asarray(loads, dtype=float))
        idx, theta = time_interp_weights(self.dt, self.n_steps, times)
        g = np.zeros((self.n_steps + 1, self.fem.n))
        for row, k, th in zip(loads, idx, theta):
            g[k] += (1.0 - th) * row
            g[k + 1] += th * row
        p = g[self.n_steps].copy()
        for k in range(self.n_steps - 1, -1, -1):
            p = g[k] + self.fem.M @ self._step_lu.solve(p, trans="T")
            if not np.all(np.isfinite(p)):
                raise FloatingPointError(
                    f"non-finite adjoint state before time step {k}"
                )
        self.n_adjoint_solves += 1
        return self.fem.mass_solve(p)

    @property
    def solve_counts(self):
        return {"forward": self.n_forward_solves, "adjoint": self.n_adjoint_solves}
