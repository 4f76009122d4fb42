"""Synthetic scene generation: Potts label maps, per-region simplex
abundances, LMM rendering with SNR-controlled noise, a label-aligned
surface model and gradient-thresholded edge masks.

All randomness flows from a single 64-bit scene seed through independent
child streams (labels, abundances, endmembers, cube noise, height noise),
so scenes are bitwise reproducible and stages stay decoupled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    AbundanceImage,
    EndmemberLibrary,
    GenerationError,
    GridDims,
    SpectralCube,
    SurfaceModel,
    ValidationError,
)

GIBBS_SWEEPS = 200
_LABEL_ATTEMPTS = 20
MIN_PAIRWISE_ANGLE_DEG = 10.0
_ENDMEMBER_ATTEMPTS = 100

#: Flat 1% reflectance, usable as an extra shadow endmember.
SHADOW_REFLECTANCE = 0.01


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic scene."""

    dims: GridDims
    num_endmembers: int = 5
    num_bands: int = 100
    num_regions: int = 5
    potts_beta: float = 2.0
    snr_hsi_db: float = 20.0
    snr_dsm_db: float = 50.0
    class_heights: tuple = None
    seed: int = 0

    def __post_init__(self):
        if self.num_regions < 2:
            raise ValidationError("num_regions must be at least 2")
        if self.dims.n < self.num_regions:
            raise ValidationError(
                f"{self.dims.n} pixels cannot host {self.num_regions} label classes")
        if self.num_endmembers < 1:
            raise ValidationError("num_endmembers must be positive")
        if self.num_bands < self.num_endmembers:
            raise ValidationError("need at least as many bands as endmembers")
        if self.potts_beta < 0.0:
            raise ValidationError("potts_beta must be nonnegative")
        heights = self.class_heights
        if heights is None:
            heights = tuple(3.0 * k for k in range(self.num_regions))
        else:
            heights = tuple(float(h) for h in heights)
        if len(heights) != self.num_regions:
            raise ValidationError("class_heights must list one height per region")
        if len(set(heights)) != len(heights):
            raise ValidationError("class_heights must be pairwise distinct")
        object.__setattr__(self, "class_heights", heights)


@dataclass(frozen=True)
class Scene:
    labels: np.ndarray               # (N,) int
    truth_abundances: AbundanceImage
    cube: SpectralCube
    dsm: SurfaceModel                # noisy
    dsm_clean: SurfaceModel          # kept for edge extraction
    edge_mask: np.ndarray            # (N,) bool
    endmembers: EndmemberLibrary

    @property
    def dims(self) -> GridDims:
        return self.cube.dims


def _child_rngs(seed: int, count: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _gibbs_sweep(labels: np.ndarray, beta: float, num_classes: int,
                 rng: np.random.Generator) -> None:
    """One checkerboard Gibbs sweep of the Potts model, in place."""
    h, w = labels.shape
    counts = np.zeros((h, w, num_classes))
    for color in (0, 1):
        counts[:] = 0.0
        for dr, dc in ((0, -1), (0, 1), (-1, 0), (1, 0)):
            rs, re = max(0, -dr), h - max(0, dr)
            cs, ce = max(0, -dc), w - max(0, dc)
            shifted = labels[rs + dr:re + dr, cs + dc:ce + dc]
            block = counts[rs:re, cs:ce]
            for k in range(num_classes):
                block[..., k] += shifted == k
        logits = beta * counts
        prob = np.exp(logits - logits.max(axis=-1, keepdims=True))
        prob /= prob.sum(axis=-1, keepdims=True)
        draw = rng.random((h, w, 1))
        sampled = (draw > prob.cumsum(axis=-1)).sum(axis=-1)
        rows, cols = np.indices((h, w))
        mask = (rows + cols) % 2 == color
        labels[mask] = sampled[mask]


def sample_potts_labels(spec: SceneSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Spatially coherent label map from fixed-sweep Gibbs sampling.

    Every one of the ``num_regions`` classes is guaranteed present;
    degenerate draws are resampled (deterministically, continuing the same
    stream) a bounded number of times.
    """
    if rng is None:
        rng = _child_rngs(spec.seed, 5)[0]
    h, w = spec.dims.height, spec.dims.width
    k = spec.num_regions
    for _ in range(_LABEL_ATTEMPTS):
        labels = rng.integers(0, k, size=(h, w))
        for _ in range(GIBBS_SWEEPS):
            _gibbs_sweep(labels, spec.potts_beta, k, rng)
        flat = labels.ravel()
        if np.unique(flat).size == k:
            return flat.astype(np.int64)
    raise GenerationError(
        f"could not realize all {k} label classes on a {h}x{w} grid")


def sample_region_abundances(labels: np.ndarray, num_endmembers: int,
                             seed_or_rng, dims: GridDims | None = None) -> AbundanceImage:
    """One uniform simplex draw per label class, shared by its pixels."""
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(seed_or_rng))
    labels = np.asarray(labels)
    num_classes = int(labels.max()) + 1
    per_class = rng.dirichlet(np.ones(num_endmembers), size=num_classes)
    data = per_class[labels].T
    if dims is None:
        dims = _dims_for(labels.size)
    return AbundanceImage(dims=dims, data=data, constrained=True)


def _dims_for(n: int) -> GridDims:
    # Label vectors carry no grid shape; any dims with the right pixel
    # count serve the per-column operations here.
    return GridDims(1, n)


def _spectral_angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    cosine = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.degrees(math.acos(min(1.0, max(-1.0, cosine))))


def synth_endmembers(num_bands: int, count: int, seed_or_rng) -> EndmemberLibrary:
    """Smooth positive spectra with pairwise spectral angle >= 10 degrees.

    Each spectrum is a sum of 3 to 6 Gaussian bumps over the band axis,
    rescaled to span [0.05, 1.0]. A spectrum too close in angle to an
    already accepted one is redrawn; generation fails after a bounded
    number of redraws.
    """
    if num_bands < count:
        raise ValidationError("need at least as many bands as endmembers")
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(seed_or_rng))
    axis = np.arange(num_bands, dtype=np.float64)
    spectra = []
    attempts = 0
    while len(spectra) < count:
        if attempts > _ENDMEMBER_ATTEMPTS:
            raise GenerationError(
                f"could not reach {MIN_PAIRWISE_ANGLE_DEG} degree separation "
                f"for {count} endmembers over {num_bands} bands")
        attempts += 1
        bumps = rng.integers(3, 7)
        s = np.zeros(num_bands)
        for _ in range(bumps):
            center = rng.uniform(0.0, num_bands)
            width = rng.uniform(num_bands / 20.0, num_bands / 5.0)
            amplitude = rng.uniform(0.2, 1.0)
            s += amplitude * np.exp(-0.5 * ((axis - center) / width) ** 2)
        span = s.max() - s.min()
        if span == 0.0:
            continue
        s = 0.05 + 0.95 * (s - s.min()) / span
        if all(_spectral_angle_deg(s, other) >= MIN_PAIRWISE_ANGLE_DEG
               for other in spectra):
            spectra.append(s)
    return EndmemberLibrary(data=np.stack(spectra, axis=1))


def _noise_sigma(signal: np.ndarray, snr_db: float) -> float:
    power = float(np.vdot(signal, signal))
    return math.sqrt(power / (signal.size * 10.0 ** (snr_db / 10.0)))


def render_cube(endmembers: EndmemberLibrary, abundances: AbundanceImage,
                snr_db: float, seed_or_rng) -> SpectralCube:
    """Linear mixture Y = E A plus white Gaussian noise at the target SNR.

    The noise variance is ||E A||_F^2 / (L N 10^(snr/10)); pass
    ``snr_db=math.inf`` for a noiseless cube.
    """
    if endmembers.count != abundances.count:
        raise ValidationError(
            f"{endmembers.count} endmembers vs {abundances.count} abundance rows")
    clean = endmembers.data @ abundances.data
    if math.isinf(snr_db):
        return SpectralCube(dims=abundances.dims, data=clean)
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(seed_or_rng))
    sigma = _noise_sigma(clean, snr_db)
    return SpectralCube(dims=abundances.dims,
                        data=clean + rng.normal(0.0, sigma, clean.shape))


def synth_dsm(labels: np.ndarray, class_heights, snr_db: float,
              seed_or_rng, dims: GridDims | None = None):
    """Label-aligned surface model; returns (noisy, clean) pair.

    The clean model assigns each pixel its class height; the noisy one
    adds white Gaussian noise at the target SNR. Both are shifted so
    their minimum height is 0.
    """
    labels = np.asarray(labels)
    heights = np.asarray(class_heights, dtype=np.float64)[labels]
    if dims is None:
        dims = _dims_for(labels.size)
    clean = SurfaceModel.from_raw(dims, heights)
    if math.isinf(snr_db):
        return clean, clean
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(seed_or_rng))
    sigma = _noise_sigma(heights, snr_db)
    noisy = SurfaceModel.from_raw(dims, heights + rng.normal(0.0, sigma, heights.shape))
    return noisy, clean


def default_edge_threshold(class_heights) -> float:
    """Half the smallest nonzero gap between class heights."""
    heights = np.sort(np.asarray(class_heights, dtype=np.float64))
    gaps = np.diff(heights)
    gaps = gaps[gaps > 0.0]
    if gaps.size == 0:
        raise ValidationError("class heights admit no nonzero gap")
    return float(gaps.min()) / 2.0


def extract_edge_mask(dsm_clean: SurfaceModel, threshold: float) -> np.ndarray:
    """Pixels whose forward-difference gradient magnitude exceeds the threshold.

    The per-pixel magnitude is sqrt(d_right^2 + d_down^2) with missing
    border differences treated as zero, so a height step marks the pixels
    on its lower-index side.
    """
    if threshold <= 0.0:
        raise ValidationError("threshold must be positive")
    h, w = dsm_clean.dims.height, dsm_clean.dims.width
    grid = dsm_clean.heights.reshape(h, w)
    d_right = np.zeros((h, w))
    d_down = np.zeros((h, w))
    d_right[:, :-1] = grid[:, 1:] - grid[:, :-1]
    d_down[:-1, :] = grid[1:, :] - grid[:-1, :]
    magnitude = np.sqrt(d_right ** 2 + d_down ** 2)
    return (magnitude > threshold).ravel()


def generate_scene(spec: SceneSpec) -> Scene:
    """Full synthetic scene from a single seed."""
    rng_labels, rng_abund, rng_endm, rng_cube, rng_dsm = _child_rngs(spec.seed, 5)
    labels = sample_potts_labels(spec, rng_labels)
    abundances = sample_region_abundances(labels, spec.num_endmembers, rng_abund,
                                          dims=spec.dims)
    endmembers = synth_endmembers(spec.num_bands, spec.num_endmembers, rng_endm)
    cube = render_cube(endmembers, abundances, spec.snr_hsi_db, rng_cube)
    dsm, dsm_clean = synth_dsm(labels, spec.class_heights, spec.snr_dsm_db,
                               rng_dsm, dims=spec.dims)
    mask = extract_edge_mask(dsm_clean, default_edge_threshold(spec.class_heights))
    return Scene(labels=labels, truth_abundances=abundances, cube=cube,
                 dsm=dsm, dsm_clean=dsm_clean, edge_mask=mask,
                 endmembers=endmembers)
