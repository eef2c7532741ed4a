"""A-optimal sensor placement for advection-diffusion Bayesian inversion."""

__version__ = "0.1.0"

from .config import OEDConfig, load_config
from .design import (
    ContinuationResult,
    DesignWeights,
    PenaltySpec,
    TraceEstimatorSet,
    TraceObjective,
    bisect_gamma,
    continuation_solve,
    default_eps_schedule,
    optimize,
    threshold_l1_design,
)
from .errors import (
    AssemblyError,
    FactorizationError,
    GeometryError,
    PointLocationError,
    WhiteningConvergenceError,
)
from .fem import FemOperators, advection_matrix, assemble
from .mesh import (
    Mesh,
    Rect,
    build_structured_mesh,
    point_locate,
    read_mesh_file,
    write_mesh_file,
)
from .observation import (
    ForwardMap,
    ObservationSetup,
    default_sensor_grid,
    make_observation_setup,
    read_sensor_file,
    write_sensor_file,
)
from .posterior import BayesRiskResult, DenseOracle, PosteriorModel, export_variance_csv
from .prior import PriorOperator
from .surrogate import (
    HessianFactors,
    LowRankSurrogate,
    apply_inverse_hessian,
    build_surrogate,
    hessian_factors,
    load_surrogate,
    save_surrogate,
)
from .transport import TransportOperators, VelocityField, time_interp_weights
from .whitening import WhiteningOperator
