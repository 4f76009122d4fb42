"""Abundance RMSE metrics and the lambda/sigma sweep harness."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass

import numpy as np

from .core import AbundanceImage, ValidationError
from .grid import build_difference_operator
from .guidance import WeightConfig, WeightKind, build_weights, first_principal_component
from .simgen import Scene
from .solver import SolverOptions, reweighted_unmix, unmix


def rmse_whole(truth: AbundanceImage, estimate: AbundanceImage) -> float:
    """Root mean square abundance error over all pixels and endmembers."""
    if truth.data.shape != estimate.data.shape:
        raise ValidationError(
            f"shape mismatch: {truth.data.shape} vs {estimate.data.shape}")
    diff = truth.data - estimate.data
    return math.sqrt(float(np.vdot(diff, diff)) / diff.size)


def rmse_edge(truth: AbundanceImage, estimate: AbundanceImage,
              edge_mask: np.ndarray) -> float:
    """RMSE restricted to the pixels selected by ``edge_mask``."""
    if truth.data.shape != estimate.data.shape:
        raise ValidationError(
            f"shape mismatch: {truth.data.shape} vs {estimate.data.shape}")
    mask = np.asarray(edge_mask, dtype=bool)
    if mask.shape != (truth.data.shape[1],):
        raise ValidationError(
            f"edge mask must have length {truth.data.shape[1]}, got {mask.shape}")
    selected = int(mask.sum())
    if selected == 0:
        raise ValidationError("edge mask selects no pixels")
    diff = truth.data[:, mask] - estimate.data[:, mask]
    return math.sqrt(float(np.vdot(diff, diff)) / diff.size)


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian parameter grid for the sweep."""

    lambdas: tuple
    sigmas: tuple
    weight_kinds: tuple

    def __post_init__(self):
        lambdas = tuple(float(v) for v in self.lambdas)
        sigmas = tuple(float(v) for v in self.sigmas)
        kinds = tuple(WeightKind(k) for k in self.weight_kinds)
        if not lambdas or not sigmas or not kinds:
            raise ValidationError("sweep grid lists must be nonempty")
        if any(not math.isfinite(v) or v < 0.0 for v in lambdas):
            raise ValidationError("lambdas must be finite and nonnegative")
        if any(not math.isfinite(v) or v <= 0.0 for v in sigmas):
            raise ValidationError("sigmas must be finite and positive")
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "weight_kinds", kinds)


@dataclass(frozen=True)
class SweepRecord:
    kind: WeightKind
    lam: float
    sigma_primary: float | None
    sigma_height: float | None
    rmse_whole: float
    rmse_edge: float
    iterations_used: int
    wall_time_seconds: float


def _cell_configs(kind: WeightKind, sigmas):
    """(sigma_primary, sigma_height) pairs a kind sweeps over.

    The no-weight kind lists every sigma so the grid shape is uniform
    across kinds, but its solves do not depend on sigma; the sweep caches
    one result per lambda and replicates it.
    """
    if kind is WeightKind.NONE:
        return [(s, None) for s in sigmas]
    if kind is WeightKind.DSM:
        return [(None, s) for s in sigmas]
    if kind.uses_height:
        return [(sp, sh) for sp in sigmas for sh in sigmas]
    return [(s, None) for s in sigmas]


def _record_key(record: SweepRecord):
    # Deterministic argmin tie-breaking: error, then smallest lambda, then
    # smallest sigmas.
    return (record.rmse_whole, record.lam,
            record.sigma_primary if record.sigma_primary is not None else -1.0,
            record.sigma_height if record.sigma_height is not None else -1.0)


def sweep(scene: Scene, grid: SweepGrid,
          options: SolverOptions = SolverOptions()) -> tuple:
    """Run every (kind, lambda, sigma) cell against the scene's ground truth.

    Pure kinds sweep ``sigma_primary`` over ``grid.sigmas``; combined
    kinds sweep the full (sigma_primary, sigma_height) product; ``dsm``
    sweeps only ``sigma_height``. The ``none`` kind does not depend on
    sigma: it solves once per lambda and replicates the record across the
    sigma grid. Abundance-based kinds run the reweighted outer loop
    governed by ``options.outer_max``.

    A failing cell is recorded with infinite errors instead of aborting
    the sweep. Returns ``(records, best)`` where ``best`` maps each kind
    to its lowest-rmse_whole record (ties broken toward smaller lambda,
    then smaller sigmas).
    """
    truth = scene.truth_abundances
    pc = None
    records = []
    best = {}
    for kind in grid.weight_kinds:
        if kind in (WeightKind.PC1, WeightKind.PC1_DSM) and pc is None:
            pc = first_principal_component(scene.cube)
        none_cache = {}
        for sigma_primary, sigma_height in _cell_configs(kind, grid.sigmas):
            operator = None
            cfg = None
            build_error = None
            try:
                cfg_sigma = None if kind is WeightKind.NONE else sigma_primary
                cfg = WeightConfig(kind=kind, sigma_primary=cfg_sigma,
                                   sigma_height=sigma_height)
                if not kind.uses_abundances:
                    weights = build_weights(cfg, scene.dims, cube=scene.cube,
                                            dsm=scene.dsm, pc=pc)
                    operator = build_difference_operator(weights, scene.dims)
            except Exception as exc:  # recorded per cell below
                build_error = exc
            for lam in grid.lambdas:
                if kind is WeightKind.NONE and lam in none_cache:
                    cached = none_cache[lam]
                    record = dataclasses.replace(cached, sigma_primary=sigma_primary)
                    records.append(record)
                    if _record_key(record) < _record_key(best[kind]):
                        best[kind] = record
                    continue
                start = time.perf_counter()
                run_options = dataclasses.replace(options, lam=lam)
                try:
                    if build_error is not None:
                        raise build_error
                    if kind.uses_abundances:
                        result = reweighted_unmix(scene.cube, scene.endmembers,
                                                  cfg, run_options, dsm=scene.dsm)
                    else:
                        result = unmix(scene.cube, scene.endmembers, operator,
                                       run_options)
                    record = SweepRecord(
                        kind=kind, lam=lam,
                        sigma_primary=sigma_primary, sigma_height=sigma_height,
                        rmse_whole=rmse_whole(truth, result.abundances),
                        rmse_edge=rmse_edge(truth, result.abundances,
                                            scene.edge_mask),
                        iterations_used=result.iterations_used,
                        wall_time_seconds=time.perf_counter() - start,
                    )
                except Exception:
                    record = SweepRecord(
                        kind=kind, lam=lam,
                        sigma_primary=sigma_primary, sigma_height=sigma_height,
                        rmse_whole=math.inf, rmse_edge=math.inf,
                        iterations_used=0,
                        wall_time_seconds=time.perf_counter() - start,
                    )
                if kind is WeightKind.NONE:
                    none_cache[lam] = record
                records.append(record)
                if kind not in best or _record_key(record) < _record_key(best[kind]):
                    best[kind] = record
    return records, best
