"""Core data containers shared across the library.

All image-shaped quantities live on a common H x W pixel grid with
row-major linearization: pixel (row, col) has linear index row * W + col.
Matrices are stored pixels-last, i.e. an L-band image with N pixels is an
(L, N) array whose column i is the spectrum of pixel i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEASIBILITY_EPS = 1e-6


class ValidationError(ValueError):
    """Inputs violate a documented precondition or invariant."""


class FormatError(ValueError):
    """A file's contents do not match its documented format."""


class GenerationError(RuntimeError):
    """Synthetic-data generation could not satisfy its constraints."""


def _as_float_matrix(data, name: str) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class GridDims:
    """Pixel grid dimensions; pixels are indexed row-major."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"grid dims must be positive, got {self.height}x{self.width}")

    @property
    def n(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class SpectralCube:
    """Observed reflectances: (bands, n_pixels) matrix bound to a grid."""

    dims: GridDims
    data: np.ndarray

    def __post_init__(self):
        data = _as_float_matrix(self.data, "cube data")
        if data.shape[1] != self.dims.n:
            raise ValidationError(
                f"cube has {data.shape[1]} pixels, grid expects {self.dims.n}")
        object.__setattr__(self, "data", data)

    @property
    def bands(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class EndmemberLibrary:
    """Endmember signatures as columns of a (bands, count) matrix."""

    data: np.ndarray

    def __post_init__(self):
        data = _as_float_matrix(self.data, "endmember data")
        norms = np.linalg.norm(data, axis=0)
        if np.any(norms == 0.0):
            # An all-zero signature degenerates both the unmixing and the
            # normalized similarity kernels.
            raise ValidationError("endmember library contains an all-zero column")
        object.__setattr__(self, "data", data)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class AbundanceImage:
    """Per-pixel endmember fractions: (count, n_pixels) matrix.

    When ``constrained`` is set, every entry must be >= -1e-6 and every
    column must sum to 1 within 1e-6 (ANC/ASC feasibility). Unconstrained
    instances hold intermediate iterates and are not checked.
    """

    dims: GridDims
    data: np.ndarray
    constrained: bool = False

    def __post_init__(self):
        data = _as_float_matrix(self.data, "abundance data")
        if data.shape[1] != self.dims.n:
            raise ValidationError(
                f"abundances have {data.shape[1]} pixels, grid expects {self.dims.n}")
        if self.constrained:
            if data.min(initial=0.0) < -FEASIBILITY_EPS:
                raise ValidationError(
                    f"constrained abundances have entry {data.min()} < -{FEASIBILITY_EPS}")
            sums = data.sum(axis=0)
            worst = np.abs(sums - 1.0).max(initial=0.0)
            if worst > FEASIBILITY_EPS:
                raise ValidationError(
                    f"constrained abundance columns deviate from sum 1 by {worst}")
        object.__setattr__(self, "data", data)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    def plane(self, m: int) -> np.ndarray:
        """Abundance map of endmember ``m`` as an (H, W) image."""
        return self.data[m].reshape(self.dims.height, self.dims.width)


@dataclass(frozen=True)
class SurfaceModel:
    """Per-pixel heights (meters) on the grid; nonnegative by construction.

    Use :meth:`from_raw` when loading external data: it shifts heights by
    their minimum, which the height similarity kernel requires (it divides
    by the squared sums of height pairs).
    """

    dims: GridDims
    heights: np.ndarray

    def __post_init__(self):
        heights = np.asarray(self.heights, dtype=np.float64)
        if heights.ndim != 1 or heights.shape[0] != self.dims.n:
            raise ValidationError(
                f"heights must be a length-{self.dims.n} vector, got shape {heights.shape}")
        if not np.all(np.isfinite(heights)):
            raise ValidationError("heights contain non-finite entries")
        if heights.min() < 0.0:
            raise ValidationError("heights must be nonnegative; use SurfaceModel.from_raw")
        object.__setattr__(self, "heights", heights)

    @classmethod
    def from_raw(cls, dims: GridDims, heights) -> "SurfaceModel":
        heights = np.asarray(heights, dtype=np.float64)
        if not np.all(np.isfinite(heights)):
            raise ValidationError("heights contain non-finite entries")
        return cls(dims, heights - heights.min())
