"""Per-edge weights computed from guidance images.

Every weighting scheme shares one similarity kernel: for feature vectors
u, v attached to neighboring pixels,

    k(u, v) = exp(-(1 / sigma) * ||u - v||^2 / ||u + v||^2)

with a small guard on the denominator. The features are pixel spectra
(``hi``), first-principal-component scores (``pc1``), abundance vectors
(``abund``) or surface heights (``dsm``). Combined kinds add the height
kernel to the primary kernel before normalization. Per pixel, weights are
normalized so the weights of the existing neighbors sum to one; the
``none`` kind is the same normalization applied to a constant kernel,
giving 1/|N(i)| per neighbor.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import (
    AbundanceImage,
    GridDims,
    SpectralCube,
    SurfaceModel,
    ValidationError,
)
from .grid import neighbor_table

DEFAULT_DENOMINATOR_EPS = 1e-12


class WeightKind(str, enum.Enum):
    NONE = "none"
    HI = "hi"
    PC1 = "pc1"
    ABUND = "abund"
    DSM = "dsm"
    HI_DSM = "hi-dsm"
    PC1_DSM = "pc1-dsm"
    ABUND_DSM = "abund-dsm"

    @property
    def uses_height(self) -> bool:
        return self in (WeightKind.DSM, WeightKind.HI_DSM,
                        WeightKind.PC1_DSM, WeightKind.ABUND_DSM)

    @property
    def uses_abundances(self) -> bool:
        return self in (WeightKind.ABUND, WeightKind.ABUND_DSM)

    @property
    def primary_source(self) -> str | None:
        """The non-height guidance source, if any: 'hi', 'pc1' or 'abund'."""
        return {
            WeightKind.HI: "hi", WeightKind.HI_DSM: "hi",
            WeightKind.PC1: "pc1", WeightKind.PC1_DSM: "pc1",
            WeightKind.ABUND: "abund", WeightKind.ABUND_DSM: "abund",
        }.get(self)


@dataclass(frozen=True)
class WeightConfig:
    """Weighting scheme selection and its kernel range parameters.

    ``sigma_primary`` is the squared range parameter of the primary
    kernel (spectra, PC scores or abundances, depending on ``kind``);
    ``sigma_height`` is the one of the height kernel, required by every
    DSM-bearing kind.
    """

    kind: WeightKind
    sigma_primary: float | None = None
    sigma_height: float | None = None
    epsilon_denominator: float = DEFAULT_DENOMINATOR_EPS

    def __post_init__(self):
        object.__setattr__(self, "kind", WeightKind(self.kind))
        if self.epsilon_denominator <= 0.0:
            raise ValidationError("epsilon_denominator must be positive")
        if self.kind.primary_source is not None:
            if self.sigma_primary is None or self.sigma_primary <= 0.0:
                raise ValidationError(
                    f"kind {self.kind.value} requires a positive sigma_primary")
        if self.kind.uses_height:
            if self.sigma_height is None or self.sigma_height <= 0.0:
                raise ValidationError(
                    f"kind {self.kind.value} requires a positive sigma_height")


@dataclass(frozen=True)
class PrincipalComponentMap:
    """First-PC scores per pixel, shifted so their minimum is exactly 0."""

    dims: GridDims
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.dims.n,):
            raise ValidationError(
                f"PC map must have shape ({self.dims.n},), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("PC map contains non-finite values")
        object.__setattr__(self, "values", values)


def similarity_kernel(u, v, sigma: float, eps: float = DEFAULT_DENOMINATOR_EPS) -> float:
    """Normalized-difference similarity of two feature vectors, in [0, 1].

    Returns exp(-(1/sigma) * ||u - v||^2 / max(||u + v||^2, eps)); the
    guard makes identical pixels maximally similar even when both are zero.
    """
    if sigma <= 0.0:
        raise ValidationError("sigma must be positive")
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValidationError("kernel arguments must have the same length")
    num = float(np.sum((u - v) ** 2))
    den = max(float(np.sum((u + v) ** 2)), eps)
    return float(np.exp(-num / (sigma * den)))


def edge_kernels(features: np.ndarray, dims: GridDims, sigma: float,
                 eps: float = DEFAULT_DENOMINATOR_EPS) -> np.ndarray:
    """Unnormalized kernel per directed edge for an (F, N) feature matrix.

    Returns a (4, N) array in DIRECTIONS order; entries of nonexistent
    edges are zero.
    """
    if sigma <= 0.0:
        raise ValidationError("sigma must be positive")
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != dims.n:
        raise ValidationError(
            f"features must have {dims.n} columns, got shape {features.shape}")
    table = neighbor_table(dims)
    kernels = np.zeros((4, dims.n))
    for d in range(4):
        i = np.nonzero(table[d] >= 0)[0]
        j = table[d, i]
        diff = features[:, i] - features[:, j]
        summ = features[:, i] + features[:, j]
        num = np.einsum("fi,fi->i", diff, diff)
        den = np.maximum(np.einsum("fi,fi->i", summ, summ), eps)
        kernels[d, i] = np.exp(-num / (sigma * den))
    return kernels


def normalize_kernels(kernels: np.ndarray, dims: GridDims) -> np.ndarray:
    """Scale kernels so each pixel's existing-neighbor weights sum to one.

    If every kernel at a pixel underflowed to zero, the pixel falls back
    to uniform weights over its existing neighbors (all neighbors being
    equally dissimilar carries no directional information).
    """
    exists = neighbor_table(dims) >= 0
    kernels = np.where(exists, kernels, 0.0)
    totals = kernels.sum(axis=0)
    degree = exists.sum(axis=0)
    dead = totals == 0.0
    if np.any(dead & (degree > 0)):
        kernels = kernels.copy()
        kernels[:, dead] = np.where(exists[:, dead], 1.0, 0.0)
        totals = kernels.sum(axis=0)
    safe = np.where(totals > 0.0, totals, 1.0)
    return np.where(exists, kernels / safe, 0.0)


def uniform_weights(dims: GridDims) -> np.ndarray:
    """Equal contribution per existing neighbor: w = 1/|N(i)|."""
    return normalize_kernels(np.ones((4, dims.n)), dims)


def weights_from_cube(cube: SpectralCube, cfg: WeightConfig) -> np.ndarray:
    """Pixel-spectrum similarity weights (hyperspectral-image guidance)."""
    return normalize_kernels(
        edge_kernels(cube.data, cube.dims, cfg.sigma_primary, cfg.epsilon_denominator),
        cube.dims)


def weights_from_pc(pc: PrincipalComponentMap, cfg: WeightConfig) -> np.ndarray:
    """First-principal-component similarity weights."""
    return normalize_kernels(
        edge_kernels(pc.values, pc.dims, cfg.sigma_primary, cfg.epsilon_denominator),
        pc.dims)


def weights_from_abundances(ab: AbundanceImage, cfg: WeightConfig) -> np.ndarray:
    """Abundance-vector similarity weights.

    Abundances are unknown a priori, so these weights only arise inside
    the reweighted outer loop, computed from the current estimate.
    """
    return normalize_kernels(
        edge_kernels(ab.data, ab.dims, cfg.sigma_primary, cfg.epsilon_denominator),
        ab.dims)


def weights_from_dsm(dsm: SurfaceModel, cfg: WeightConfig) -> np.ndarray:
    """Height similarity weights from the surface model."""
    return normalize_kernels(
        edge_kernels(dsm.heights, dsm.dims, cfg.sigma_height, cfg.epsilon_denominator),
        dsm.dims)


def combined_weights(primary_kernels: np.ndarray, height_kernels: np.ndarray,
                     dims: GridDims) -> np.ndarray:
    """Normalize the sum of a primary kernel and the height kernel."""
    primary_kernels = np.asarray(primary_kernels, dtype=np.float64)
    height_kernels = np.asarray(height_kernels, dtype=np.float64)
    if primary_kernels.shape != (4, dims.n) or height_kernels.shape != (4, dims.n):
        raise ValidationError("per-edge kernels must have shape (4, N)")
    return normalize_kernels(primary_kernels + height_kernels, dims)


def first_principal_component(cube: SpectralCube) -> PrincipalComponentMap:
    """Scores of the dominant principal direction of the pixel spectra.

    The cube is mean-centered over pixels before the decomposition. The
    direction's sign is fixed so its loading correlates nonnegatively with
    the mean spectrum, and the scores are shifted so their minimum is 0.
    A spatially constant cube has no principal direction and yields the
    all-zero map.
    """
    if cube.dims.n < 2:
        raise ValidationError("principal component needs at least 2 pixels")
    mean = cube.data.mean(axis=1, keepdims=True)
    centered = cube.data - mean
    if not np.any(centered):
        return PrincipalComponentMap(cube.dims, np.zeros(cube.dims.n))
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    loading = u[:, 0]
    orientation = float(loading @ mean[:, 0])
    if orientation < 0.0 or (orientation == 0.0 and loading[np.nonzero(loading)[0][0]] < 0.0):
        loading = -loading
    scores = loading @ centered
    return PrincipalComponentMap(cube.dims, scores - scores.min())


def build_weights(cfg: WeightConfig, dims: GridDims, *,
                  cube: SpectralCube | None = None,
                  dsm: SurfaceModel | None = None,
                  abundances: AbundanceImage | None = None,
                  pc: PrincipalComponentMap | None = None) -> np.ndarray:
    """Dispatch to the weighting function selected by ``cfg.kind``.

    Supplies whichever guidance inputs the kind needs; the principal
    component map is derived from ``cube`` when not passed explicitly.
    """
    kind = cfg.kind
    if kind is WeightKind.NONE:
        return uniform_weights(dims)

    height_kernels = None
    if kind.uses_height:
        if dsm is None:
            raise ValidationError(f"kind {kind.value} requires a surface model")
        if dsm.dims != dims:
            raise ValidationError("surface model grid does not match")
        height_kernels = edge_kernels(dsm.heights, dims, cfg.sigma_height,
                                      cfg.epsilon_denominator)
        if kind is WeightKind.DSM:
            return normalize_kernels(height_kernels, dims)

    source = kind.primary_source
    if source == "hi":
        if cube is None:
            raise ValidationError(f"kind {kind.value} requires the spectral cube")
        if cube.dims != dims:
            raise ValidationError("cube grid does not match")
        primary = edge_kernels(cube.data, dims, cfg.sigma_primary,
                               cfg.epsilon_denominator)
    elif source == "pc1":
        if pc is None:
            if cube is None:
                raise ValidationError(
                    f"kind {kind.value} requires the spectral cube or a PC map")
            pc = first_principal_component(cube)
        if pc.dims != dims:
            raise ValidationError("PC map grid does not match")
        primary = edge_kernels(pc.values, dims, cfg.sigma_primary,
                               cfg.epsilon_denominator)
    elif source == "abund":
        if abundances is None:
            raise ValidationError(f"kind {kind.value} requires abundances")
        if abundances.dims != dims:
            raise ValidationError("abundance grid does not match")
        primary = edge_kernels(abundances.data, dims, cfg.sigma_primary,
                               cfg.epsilon_denominator)
    else:  # pragma: no cover - every non-none kind has a source or is DSM
        raise ValidationError(f"unsupported weight kind {kind!r}")

    if height_kernels is None:
        return normalize_kernels(primary, dims)
    return combined_weights(primary, height_kernels, dims)
