"""Dense correspondence and interpolation between triangle meshes from
combined spectral (functional map) and spatial (deformation) objectives."""

from .errors import (
    ConvergenceError,
    DegenerateError,
    DimensionError,
    DisconnectedError,
    EmptyInputError,
    ParseError,
    ShapeMatchError,
    SingularError,
    TopologyError,
)
from .mesh import Mesh, Operators, build_operators, load_mesh, normalize_mesh
from .pointmap import PointMap
from .spectral import EigenBasis, compute_eigenbasis, project, unproject

__version__ = "0.1.0"
