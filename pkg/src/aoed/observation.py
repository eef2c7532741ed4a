"""Sensors, observation times, and the parameter-to-observable map.

Observations are sensor point values of the transported state at a set of
instants, flattened time-major: entry ``l * n_sensors + j`` is sensor j at
observation time l.  The map F takes an initial condition to that vector;
its adjoint is mass-weighted, so ``d . F(m) == inner_M(m, F*(d))``.

The preconditioned map chains the prior covariance square root in front
of F; all low-rank machinery downstream operates on that composition.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import point_locate, as_rects
from .transport import time_interp_weights


@dataclass
class ObservationSetup:
    """Located sensors plus observation instants for one mesh."""

    sensor_points: np.ndarray
    obs_times: np.ndarray
    scatter: sp.csr_matrix  # (n_sensors, n) barycentric evaluation rows

    @property
    def n_sensors(self):
        return self.sensor_points.shape[0]

    @property
    def n_times(self):
        return self.obs_times.shape[0]

    @property
    def n_obs(self):
        return self.n_sensors * self.n_times

    def flat_index(self, time_idx, sensor_idx):
        return time_idx * self.n_sensors + sensor_idx


def make_observation_setup(mesh, sensor_points, obs_times, t_final):
    """Locate sensors on the mesh and validate the observation window."""
    sensor_points = np.atleast_2d(np.asarray(sensor_points, dtype=float))
    obs_times = np.asarray(obs_times, dtype=float)
    if sensor_points.shape[0] == 0:
        raise ValueError("at least one sensor location is required")
    if np.any(np.diff(obs_times) <= 0):
        raise ValueError("observation times must be strictly increasing")
    if obs_times[0] < 0 or obs_times[-1] > t_final * (1 + 1e-12):
        raise ValueError(
            f"observation window [{obs_times[0]:g}, {obs_times[-1]:g}] not "
            f"inside [0, {t_final:g}]"
        )
    tri_idx, bary = point_locate(mesh, sensor_points)
    ns = sensor_points.shape[0]
    rows = np.repeat(np.arange(ns), 3)
    cols = mesh.triangles[tri_idx].ravel()
    scatter = sp.coo_matrix(
        (bary.ravel(), (rows, cols)), shape=(ns, mesh.n_nodes)
    ).tocsr()
    return ObservationSetup(sensor_points, obs_times, scatter)


def default_sensor_grid(holes, spacing=0.0818, margin=0.05, clearance=0.02):
    """Regular candidate grid over the domain, keeping clear of the holes.

    Points run from ``margin`` to ``1 - margin`` at roughly the requested
    spacing; any point within ``clearance`` of a hole is dropped.
    """
    if not 0 < spacing < 1:
        raise ValueError(f"spacing must be in (0, 1), got {spacing}")
    n_side = int(round((1.0 - 2.0 * margin) / spacing)) + 1
    ticks = np.linspace(margin, 1.0 - margin, n_side)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    keep = np.ones(pts.shape[0], dtype=bool)
    for r in as_rects(holes):
        keep &= ~r.contains(pts[:, 0], pts[:, 1], pad=clearance)
    return pts[keep]


def read_sensor_file(path):
    pts = np.loadtxt(path, dtype=float, ndmin=2)
    if pts.shape[1] != 2:
        raise ValueError(f"sensor file {path} must have two columns per line")
    return pts


def write_sensor_file(path, points):
    with open(path, "w", encoding="utf-8") as f:
        for x, y in points:
            f.write(f"{x:.17g} {y:.17g}\n")


class ForwardMap:
    """Initial condition to observations, with adjoint and preconditioning.

    One `apply` costs exactly one forward PDE solve and one
    `apply_adjoint` exactly one adjoint solve; the underlying transport
    counters expose this for tests.  `noise_sigma` (scalar or length
    n_sensors) is the observation noise scale absorbed into the
    preconditioned map at surrogate-construction time.
    """

    def __init__(self, transport, setup, prior=None, noise_sigma=1.0):
        self.transport = transport
        self.setup = setup
        self.prior = prior
        sigma = np.asarray(noise_sigma, dtype=float)
        if np.any(sigma <= 0):
            raise ValueError("noise_sigma must be positive")
        self.noise_sigma = sigma
        k, theta = time_interp_weights(
            transport.dt, transport.n_steps, setup.obs_times
        )
        self._steps = k
        self._theta = theta

    @property
    def n(self):
        return self.transport.fem.n

    @property
    def n_obs(self):
        return self.setup.n_obs

    def observe(self, traj):
        """Interpolate a trajectory at sensors and instants, time-major."""
        out = np.empty((self.setup.n_times, self.setup.n_sensors))
        for l, (k, th) in enumerate(zip(self._steps, self._theta)):
            state = (1.0 - th) * traj[k] + th * traj[k + 1]
            out[l] = self.setup.scatter @ state
        return out.ravel()

    def apply(self, m):
        """F m: one forward solve plus sensor interpolation."""
        return self.observe(self.transport.forward_solve(m))

    def apply_adjoint(self, d):
        """F* d, the mass-weighted adjoint: one adjoint solve."""
        d = np.asarray(d, dtype=float).reshape(
            self.setup.n_times, self.setup.n_sensors
        )
        loads = (self.setup.scatter.T @ d.T).T
        return self.transport.adjoint_solve(loads, self.setup.obs_times)

    def apply_preconditioned(self, v):
        """F applied after the prior covariance square root."""
        return self.apply(self.prior.apply_cov_sqrt(v))

    def apply_preconditioned_adjoint(self, d):
        """Adjoint of apply_preconditioned; the sqrt is self-adjoint in M."""
        return self.prior.apply_cov_sqrt(self.apply_adjoint(d))

    def noise_scale_vector(self):
        """Per-observation 1/sigma factors, time-major, length n_obs."""
        sigma = np.broadcast_to(
            np.atleast_1d(self.noise_sigma), (self.setup.n_sensors,)
        )
        return np.tile(1.0 / sigma, self.setup.n_times)
