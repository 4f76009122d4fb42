"""Spatially regularized spectral unmixing with guidance-weighted TV.

The solver estimates simplex-constrained abundances under a linear
mixture model with an anisotropic total-variation penalty whose per-edge
weights come from guidance images: the cube itself, its first principal
component, the abundances (via a reweighted outer loop) or a LiDAR-style
surface model, plus height-combined variants.
"""

from .core import (
    AbundanceImage,
    EndmemberLibrary,
    FormatError,
    GenerationError,
    GridDims,
    SpectralCube,
    SurfaceModel,
    ValidationError,
)
from .evaluate import SweepGrid, SweepRecord, rmse_edge, rmse_whole, sweep
from .grid import GuidanceOperator, build_difference_operator, gram_solve, neighbor_index
from .guidance import (
    PrincipalComponentMap,
    WeightConfig,
    WeightKind,
    build_weights,
    combined_weights,
    first_principal_component,
    similarity_kernel,
    uniform_weights,
    weights_from_abundances,
    weights_from_cube,
    weights_from_dsm,
    weights_from_pc,
)
from .simgen import Scene, SceneSpec, generate_scene
from .solver import (
    SolverOptions,
    SolverState,
    UnmixResult,
    reweighted_unmix,
    soft_threshold,
    unmix,
)

__version__ = "0.1.0"
