"""Exception hierarchy shared by all modules."""


class GradhomError(Exception):
    """Base class for every error raised by the package."""


class ResolutionError(GradhomError):
    """Requested mesh resolution cannot represent the cell geometry."""


class MeshFormatError(GradhomError):
    """Mesh file does not follow the ``gradhom-mesh v1`` layout."""


class PairingError(GradhomError):
    """Opposite boundary nodes do not match under the lattice translation."""


class InvertedElementError(GradhomError):
    """Element Jacobian is non-positive at a quadrature point."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class ConstraintError(GradhomError):
    """Periodic constraint graph is inconsistent."""


class SolverError(GradhomError):
    """Iterative solver failed to reach the requested tolerance."""

    def __init__(self, message, residual=float("nan"), label=None):
        super().__init__(message)
        self.residual = residual
        self.label = label


class ConsistencyError(GradhomError):
    """A solvability or energy-consistency identity is violated."""


class SymmetryError(GradhomError):
    """Tensor lacks the index symmetry required for Voigt packing."""


class ConfigError(GradhomError):
    """Run configuration is missing keys or holds invalid values."""
