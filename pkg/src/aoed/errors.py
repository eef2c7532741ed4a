"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Invalid domain geometry (bad holes, bad resolution, broken mesh)."""


class AssemblyError(RuntimeError):
    """Finite element assembly failed (degenerate element, bad input sizes)."""


class PointLocationError(ValueError):
    """A query point lies outside the mesh or inside a hole."""


class FactorizationError(RuntimeError):
    """A sparse factorization failed, typically an SPD violation."""


class WhiteningConvergenceError(RuntimeError):
    """The iterative inverse square root did not reach its tolerance."""
