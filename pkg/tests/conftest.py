"""Shared fixtures: a small problem sized for dense cross-checks."""

import numpy as np
import pytest

from aoed.fem import assemble
from aoed.mesh import build_structured_mesh
from aoed.observation import ForwardMap, default_sensor_grid, make_observation_setup
from aoed.prior import PriorOperator
from aoed.transport import TransportOperators, VelocityField
from aoed.whitening import WhiteningOperator

DEFAULT_HOLES = ((0.25, 0.5, 0.15, 0.4), (0.6, 0.85, 0.6, 0.85))


class SmallProblem:
    """Bundle of pipeline pieces on a coarse mesh (n of order 100)."""

    def __init__(self, resolution=12, holes=DEFAULT_HOLES, n_steps=16,
                 spacing=0.17, n_times=5):
        self.mesh = build_structured_mesh(resolution, holes=holes)
        self.fem = assemble(self.mesh)
        self.prior = PriorOperator(self.fem)
        self.whitening = WhiteningOperator(self.fem, mode="dense")
        self.velocity = VelocityField.analytic()
        self.transport = TransportOperators(
            self.mesh, self.fem, self.velocity, n_steps=n_steps
        )
        sensors = default_sensor_grid(holes, spacing=spacing)
        times = np.linspace(1.0, 4.0, n_times)
        self.setup = make_observation_setup(self.mesh, sensors, times, 4.0)
        self.fmap = ForwardMap(self.transport, self.setup, prior=self.prior)

    @property
    def n(self):
        return self.mesh.n_nodes


@pytest.fixture(scope="session")
def small_problem():
    return SmallProblem()


@pytest.fixture(scope="session")
def plain_square():
    """Hole-free coarse mesh with its operators, for exactness checks."""
    mesh = build_structured_mesh(6, holes=())
    return mesh, assemble(mesh)
