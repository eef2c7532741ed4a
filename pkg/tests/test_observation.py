import numpy as np
import pytest

from aoed.errors import PointLocationError
from aoed.mesh import build_structured_mesh
from aoed.observation import (
    default_sensor_grid,
    make_observation_setup,
    read_sensor_file,
    write_sensor_file,
)

HOLES = ((0.25, 0.5, 0.15, 0.4), (0.6, 0.85, 0.6, 0.85))


def test_default_sensor_grid_default_count_and_geometry():
    pts = default_sensor_grid(HOLES)
    assert pts.shape == (116, 2)
    assert pts.min() >= 0.05 - 1e-12 and pts.max() <= 0.95 + 1e-12
    from aoed.mesh import as_rects

    for r in as_rects(HOLES):
        assert r.distance(pts[:, 0], pts[:, 1]).min() >= 0.02 - 1e-12


def test_sensor_grid_spacing_controls_count():
    coarse = default_sensor_grid(HOLES, spacing=0.17)
    fine = default_sensor_grid(HOLES, spacing=0.0578)
    assert coarse.shape[0] == 30
    assert fine.shape[0] == 239
    assert coarse.shape[0] < fine.shape[0]


def test_observation_setup_interpolates_linear_fields_exactly(small_problem):
    p = small_problem
    setup = p.setup
    nodal = 1.5 * p.mesh.nodes[:, 0] - 0.75 * p.mesh.nodes[:, 1] + 0.2
    # a stationary trajectory observes the same linear values at all times
    traj = np.tile(nodal, (p.transport.times.size, 1))
    obs = p.fmap.observe(traj)
    pts = setup.sensor_points
    expect_one = 1.5 * pts[:, 0] - 0.75 * pts[:, 1] + 0.2
    expect = np.tile(expect_one, setup.n_times)
    assert obs.shape == (setup.n_obs,)
    assert np.allclose(obs, expect, atol=1e-12)


def test_flat_index_layout(small_problem):
    setup = small_problem.setup
    k = setup.flat_index(2, 5)
    assert k == 2 * setup.n_sensors + 5
    assert setup.n_obs == setup.n_sensors * setup.n_times


def test_forward_map_matches_manual_composition(small_problem):
    p = small_problem
    rng = np.random.default_rng(0)
    m = rng.standard_normal(p.n)
    d = p.fmap.apply(m)
    traj = p.transport.forward_solve(m)
    assert np.allclose(d, p.fmap.observe(traj), atol=1e-13)
    assert d.shape == (p.setup.n_obs,)


def test_forward_adjoint_pairing(small_problem):
    p = small_problem
    rng = np.random.default_rng(1)
    for _ in range(3):
        m = rng.standard_normal(p.n)
        d = rng.standard_normal(p.setup.n_obs)
        lhs = p.fmap.apply(m) @ d
        rhs = p.fem.inner(m, p.fmap.apply_adjoint(d))
        assert abs(lhs - rhs) / (abs(lhs) + 1e-300) < 1e-11


def test_preconditioned_map_is_plain_map_after_prior_sqrt(small_problem):
    p = small_problem
    rng = np.random.default_rng(2)
    v = rng.standard_normal(p.n)
    direct = p.fmap.apply_preconditioned(v)
    composed = p.fmap.apply(p.prior.apply_cov_sqrt(v))
    assert np.allclose(direct, composed, atol=1e-11)


def test_noise_scale_vector(small_problem):
    s = small_problem.fmap.noise_scale_vector()
    assert s.shape == (small_problem.setup.n_obs,)
    assert np.allclose(s, 1.0)


def test_sensors_in_holes_are_rejected(small_problem):
    times = np.linspace(1.0, 4.0, 3)
    with pytest.raises(PointLocationError):
        make_observation_setup(
            small_problem.mesh, np.array([[0.375, 0.275]]), times, 4.0
        )


def test_sensor_file_roundtrip(tmp_path):
    pts = default_sensor_grid(HOLES, spacing=0.17)
    path = tmp_path / "sensors.txt"
    write_sensor_file(path, pts)
    back = read_sensor_file(path)
    assert np.allclose(back, pts)
