import numpy as np
import pytest

from aoed.fem import assemble
from aoed.mesh import build_structured_mesh
from aoed.transport import TransportOperators, VelocityField, time_interp_weights


@pytest.fixture(scope="module")
def square_ops():
    mesh = build_structured_mesh(8, holes=())
    fem = assemble(mesh)
    ops = TransportOperators(
        mesh, fem, VelocityField.analytic(), kappa=1e-2, t_final=1.0, n_steps=10
    )
    return mesh, fem, ops


def _mass_drift(resolution):
    mesh = build_structured_mesh(resolution, holes=())
    fem = assemble(mesh)
    ops = TransportOperators(
        mesh, fem, VelocityField.analytic(), kappa=1e-2, t_final=1.0, n_steps=10
    )
    m0 = np.random.default_rng(0).random(fem.n)
    traj = ops.forward_solve(m0)
    masses = traj @ (fem.M @ np.ones(fem.n))
    return np.abs(masses / masses[0] - 1.0).max()


def test_forward_solve_shapes_and_counter(square_ops):
    mesh, fem, ops = square_ops
    before = dict(ops.solve_counts)
    traj = ops.forward_solve(np.ones(fem.n))
    assert traj.shape == (ops.times.size, fem.n)
    assert np.allclose(traj[0], 1.0)
    assert ops.solve_counts["forward"] == before["forward"] + 1


def test_mass_conservation_up_to_interpolation_error():
    # no-flux boundaries and a tangential velocity conserve total mass; the
    # nodal interpolant of the gyre is only divergence free to O(h^2), so
    # the drift must be small and shrink under refinement
    drift8 = _mass_drift(8)
    drift16 = _mass_drift(16)
    assert drift8 < 2e-3
    assert drift16 < 0.4 * drift8


def test_diffusion_contracts_energy(square_ops):
    mesh, fem, ops = square_ops
    rng = np.random.default_rng(1)
    m0 = rng.standard_normal(fem.n)
    traj = ops.forward_solve(m0)
    norms = [fem.norm(traj[k]) for k in range(traj.shape[0])]
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


def test_solution_tends_to_spatial_mean():
    mesh = build_structured_mesh(8, holes=())
    fem = assemble(mesh)
    ops = TransportOperators(
        mesh, fem, VelocityField.analytic(), kappa=0.5, t_final=2.0, n_steps=40
    )
    m0 = (mesh.nodes[:, 0] > 0.5).astype(float)
    traj = ops.forward_solve(m0)
    ones = np.ones(fem.n)
    mean_value = (m0 @ (fem.M @ ones)) / (ones @ (fem.M @ ones))
    assert np.ptp(traj[-1]) < 0.02 * np.ptp(traj[0])
    assert np.allclose(traj[-1], mean_value, atol=0.02)


def test_forward_adjoint_duality(square_ops):
    # sum_k <obs(traj, t_k), d_k> equals <m, adjoint(d)>_M exactly
    mesh, fem, ops = square_ops
    rng = np.random.default_rng(2)
    m = rng.standard_normal(fem.n)
    times = np.array([0.3, 0.7, 1.0])
    loads = rng.standard_normal((times.size, fem.n))
    traj = ops.forward_solve(m)
    dt = ops.times[1] - ops.times[0]
    k, theta = time_interp_weights(dt, ops.times.size - 1, times)
    lhs = 0.0
    for j in range(times.size):
        state = (1.0 - theta[j]) * traj[k[j]] + theta[j] * traj[k[j] + 1]
        lhs += loads[j] @ state
    back = ops.adjoint_solve(loads, times)
    rhs = fem.inner(m, back)
    assert abs(lhs - rhs) / (abs(lhs) + 1e-300) < 1e-11


def test_time_interp_weights_reproduce_grid_times(square_ops):
    _, _, ops = square_ops
    dt = ops.times[1] - ops.times[0]
    req = np.array([0.05, 0.314159, 0.99, 1.0])
    k, theta = time_interp_weights(dt, ops.times.size - 1, req)
    recon = (k + theta) * dt
    assert np.allclose(recon, req, atol=1e-12)
    assert np.all((0.0 <= theta) & (theta <= 1.0))
    assert np.all(k + 1 <= ops.times.size - 1)
    with pytest.raises(ValueError):
        time_interp_weights(dt, ops.times.size - 1, np.array([1.5]))


def test_low_diffusivity_guard():
    mesh = build_structured_mesh(8, holes=())
    fem = assemble(mesh)
    with pytest.raises(ValueError):
        TransportOperators(
            mesh, fem, VelocityField.analytic(), kappa=1e-9, n_steps=4
        )
    ops = TransportOperators(
        mesh,
        fem,
        VelocityField.analytic(),
        kappa=1e-9,
        n_steps=4,
        allow_low_kappa=True,
    )
    assert ops.kappa == 1e-9
