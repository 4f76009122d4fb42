"""ADMM solver for guidance-weighted TV-regularized constrained unmixing.

The problem solved is

    min_A  0.5 ||Y - E A||_F^2 + lambda ||A W||_{1,1}
    s.t.   A >= 0 (entrywise),  column sums of A equal 1

with W the sparse weighted difference operator from :mod:`wtvunmix.grid`.
It is split over five auxiliary blocks

    V1 = E U,  V2 = U,  V3 = V2 W,  V4 = U,  V5 = U

carrying, respectively, the data fit, the TV coupling, the TV prox, the
nonnegativity projection and the sum-to-one projection, each with a
Lagrange multiplier D1..D5 updated by dual ascent.

:func:`admm_step` composes the documented single-block updates into one
reference iteration. :func:`unmix` runs an algebraically identical loop
that keeps the data block in endmember space: V1 and D1 appear only
through E^T V1, E^T D1 and a few inner products, which removes every
(bands x pixels) array from the iteration. ``tests/test_solver.py`` pins
the two paths against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from threadpoolctl import threadpool_limits

from .core import (
    AbundanceImage,
    EndmemberLibrary,
    SpectralCube,
    SurfaceModel,
    ValidationError,
)
from .grid import GuidanceOperator, build_difference_operator, gram_solve
from .guidance import (
    WeightConfig,
    WeightKind,
    build_weights,
    uniform_weights,
    weights_from_dsm,
)


@dataclass(frozen=True)
class SolverOptions:
    """Regularization strength and ADMM/outer-loop controls."""

    lam: float = 0.0
    mu: float = 0.05
    max_iterations: int = 500
    tolerance: float = 1e-5
    outer_max: int = 5
    outer_tolerance: float = 1e-3

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValidationError("lam must be nonnegative")
        if self.mu <= 0.0:
            raise ValidationError("mu must be positive")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1")
        if self.tolerance <= 0.0:
            raise ValidationError("tolerance must be positive")
        if self.outer_max < 1:
            raise ValidationError("outer_max must be at least 1")
        if self.outer_tolerance <= 0.0:
            raise ValidationError("outer_tolerance must be positive")


@dataclass
class SolverState:
    """All ADMM iterates; shapes are fixed by (L, M, N)."""

    U: np.ndarray        # (M, N)
    V1: np.ndarray       # (L, N)
    V2: np.ndarray       # (M, N)
    V3: np.ndarray       # (M, 4N)
    V4: np.ndarray       # (M, N)
    V5: np.ndarray       # (M, N)
    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    D4: np.ndarray
    D5: np.ndarray
    iteration: int = 0


@dataclass(frozen=True)
class UnmixResult:
    abundances: AbundanceImage
    objective_trace: np.ndarray      # (iterations_used,)
    residual_trace: np.ndarray       # (iterations_used, 2): relative primal, dual
    iterations_used: int
    converged: bool


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    """Entrywise sign(x) * max(|x| - t, 0)."""
    if t < 0.0:
        raise ValidationError("threshold must be nonnegative")
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def project_nonnegative(x: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the nonnegative orthant."""
    return np.maximum(x, 0.0)


def project_sum_to_one(x: np.ndarray) -> np.ndarray:
    """Euclidean projection onto columns summing to one.

    Shifts each column's entries by (1 - column sum) / M, the projection
    onto the affine sum-to-one set (not the simplex: entries may stay
    negative).
    """
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[0]
    return x + (1.0 - x.sum(axis=0)) / m


def u_solve_factor(endmembers: EndmemberLibrary):
    """Cholesky factorization of (E^T E + 3 I), reused across iterations."""
    e = endmembers.data
    return cho_factor(e.T @ e + 3.0 * np.eye(e.shape[1]))


def initial_state(cube: SpectralCube, endmembers: EndmemberLibrary,
                  operator: GuidanceOperator) -> SolverState:
    """Feasible deterministic start: uniform U, splits set consistently."""
    m, n = endmembers.count, cube.dims.n
    u = np.full((m, n), 1.0 / m)
    v2 = u.copy()
    return SolverState(
        U=u,
        V1=endmembers.data @ u,
        V2=v2,
        V3=operator.weighted_differences(v2),
        V4=u.copy(),
        V5=u.copy(),
        D1=np.zeros((endmembers.bands, n)),
        D2=np.zeros((m, n)),
        D3=np.zeros((m, 4 * n)),
        D4=np.zeros((m, n)),
        D5=np.zeros((m, n)),
    )


def update_u(state: SolverState, endmembers: EndmemberLibrary, factor) -> np.ndarray:
    """Exact minimizer of the four quadratic coupling terms in U."""
    e = endmembers.data
    rhs = (e.T @ (state.V1 + state.D1) + (state.V2 + state.D2)
           + (state.V4 + state.D4) + (state.V5 + state.D5))
    return cho_solve(factor, rhs)


def update_v1(state: SolverState, y: np.ndarray, endmembers: EndmemberLibrary,
              mu: float) -> np.ndarray:
    """Closed-form data-block update (Y + mu (EU - D1)) / (1 + mu)."""
    return (y + mu * (endmembers.data @ state.U - state.D1)) / (1.0 + mu)


def update_v2(state: SolverState, operator: GuidanceOperator) -> np.ndarray:
    """TV coupling block: (U - D2 + (V3 + D3) W^T) (I + W W^T)^{-1}."""
    rhs = (state.U - state.D2) + np.asarray((state.V3 + state.D3) @ operator.operator.T)
    return gram_solve(operator, rhs)


def update_v3(state: SolverState, operator: GuidanceOperator, lam: float,
              mu: float) -> np.ndarray:
    """TV prox block: soft(V2 W - D3, lam / mu)."""
    return soft_threshold(operator.weighted_differences(state.V2) - state.D3, lam / mu)


def update_duals(state: SolverState, endmembers: EndmemberLibrary,
                 operator: GuidanceOperator) -> tuple:
    """Dual ascent on the five split constraints; returns (D1, ..., D5)."""
    eu = endmembers.data @ state.U
    v2w = operator.weighted_differences(state.V2)
    return (
        state.D1 - eu + state.V1,
        state.D2 - state.U + state.V2,
        state.D3 - v2w + state.V3,
        state.D4 - state.U + state.V4,
        state.D5 - state.U + state.V5,
    )


def admm_step(state: SolverState, cube: SpectralCube, endmembers: EndmemberLibrary,
              operator: GuidanceOperator, options: SolverOptions,
              factor=None) -> SolverState:
    """One reference ADMM iteration composed of the single-block updates.

    :func:`unmix` runs an equivalent but faster loop; this composition is
    the documented order of operations (U, then V1..V5 each seeing the
    freshest iterates, then the dual ascent).
    """
    if factor is None:
        factor = u_solve_factor(endmembers)
    state.U = update_u(state, endmembers, factor)
    state.V1 = update_v1(state, cube.data, endmembers, options.mu)
    state.V2 = update_v2(state, operator)
    state.V3 = update_v3(state, operator, options.lam, options.mu)
    state.V4 = project_nonnegative(state.U - state.D4)
    state.V5 = project_sum_to_one(state.U - state.D5)
    state.D1, state.D2, state.D3, state.D4, state.D5 = update_duals(
        state, endmembers, operator)
    state.iteration += 1
    return state


def constrain_abundances(u: np.ndarray, dims) -> AbundanceImage:
    """Feasible abundances from a near-feasible iterate.

    Clips negatives to zero, then rescales each column by its sum;
    all-zero columns fall back to the uniform vector. The order matters:
    an affine shift after clipping could reintroduce negative entries.
    """
    m = u.shape[0]
    clipped = np.maximum(u, 0.0)
    sums = clipped.sum(axis=0)
    safe = np.where(sums > 0.0, sums, 1.0)
    data = np.where(sums > 0.0, clipped / safe, 1.0 / m)
    return AbundanceImage(dims=dims, data=data, constrained=True)


def unmix(cube: SpectralCube, endmembers: EndmemberLibrary,
          operator: GuidanceOperator, options: SolverOptions) -> UnmixResult:
    """Solve the weighted-TV constrained unmixing problem by ADMM.

    Stops when both scaled residuals drop below ``options.tolerance`` or
    after ``options.max_iterations``. The primal residual stacks the five
    split-constraint violations and is scaled by the norm of the current
    left-hand sides; the dual residual is mu times the constraint-mapped
    change of (V1, V2, V4, V5), scaled by the norm of the mapped duals
    (both floored at 1).

    Returns feasible abundances (see :func:`constrain_abundances`), the
    per-iteration objective 0.5 ||Y - EU||_F^2 + lam ||U W||_{1,1}, and the
    per-iteration scaled residual pair.
    """
    if endmembers.bands != cube.bands:
        raise ValidationError(
            f"endmembers have {endmembers.bands} bands, cube has {cube.bands}")
    if operator.dims != cube.dims:
        raise ValidationError("difference operator grid does not match the cube")

    with threadpool_limits(limits=1):
        return _unmix_fused(cube, endmembers, operator, options)


def _unmix_fused(cube: SpectralCube, endmembers: EndmemberLibrary,
                 operator: GuidanceOperator, options: SolverOptions) -> UnmixResult:
    # Data-block bookkeeping: the reference iterates V1 (L x N) and D1
    # (L x N) are represented by p = E^T V1, q = E^T D1 and the scalars
    # y1 = <Y, D1>, n1 = ||D1||_F^2, which is all the rest of the
    # iteration ever reads of them.
    y = cube.data
    e = endmembers.data
    w = operator.operator
    wt = w.T.tocsr()
    lam, mu = options.lam, options.mu
    m, n = endmembers.count, cube.dims.n

    gram = e.T @ e
    ety = e.T @ y
    y_sq = float(np.vdot(y, y))
    factor = cho_factor(gram + 3.0 * np.eye(m))
    operator.gram_lu  # force the factorization before the loop

    u = np.full((m, n), 1.0 / m)
    p = gram @ u                    # E^T V1 with V1 = E U0
    q = np.zeros((m, n))            # E^T D1 with D1 = 0
    y1 = 0.0
    n1 = 0.0
    v2 = u.copy()
    v3 = np.asarray(v2 @ w)
    v4 = u.copy()
    v5 = u.copy()
    d2 = np.zeros((m, n))
    d3 = np.zeros_like(v3)
    d4 = np.zeros((m, n))
    d5 = np.zeros((m, n))

    objective = np.empty(options.max_iterations)
    residuals = np.empty((options.max_iterations, 2))
    converged = False
    used = options.max_iterations

    for k in range(options.max_iterations):
        u = cho_solve(factor, (p + q) + (v2 + d2) + (v4 + d4) + (v5 + d5))
        gu = gram @ u
        ety_u = float(np.vdot(ety, u))
        u_gu = float(np.vdot(u, gu))
        data_sq = max(y_sq - 2.0 * ety_u + u_gu, 0.0)

        p_new = (ety + mu * (gu - q)) / (1.0 + mu)

        rhs = (u - d2) + np.asarray((v3 + d3) @ wt)
        v2_new = operator.gram_lu.solve(rhs.T).T
        v2w = np.asarray(v2_new @ w)
        v3 = soft_threshold(v2w - d3, lam / mu)
        v4_new = np.maximum(u - d4, 0.0)
        shifted = u - d5
        v5_new = shifted + (1.0 - shifted.sum(axis=0)) / m

        # Residuals of the five constraints; ||EU - V1|| follows from the
        # tracked data-block quantities since EU - V1 = (EU - Y + mu D1)/(1+mu).
        u_q = float(np.vdot(u, q))
        r1_sq = max(data_sq + mu * mu * n1 + 2.0 * mu * (u_q - y1), 0.0) / (1.0 + mu) ** 2
        primal = math.sqrt(
            r1_sq
            + float(np.vdot(u - v2_new, u - v2_new))
            + float(np.vdot(v2w - v3, v2w - v3))
            + float(np.vdot(u - v4_new, u - v4_new))
            + float(np.vdot(u - v5_new, u - v5_new)))
        dual_mat = (p_new - p) + (v2_new - v2) + (v4_new - v4) + (v5_new - v5)
        dual = mu * float(np.linalg.norm(dual_mat))

        # D1 family, in place of D1 <- D1 - EU + V1 = (D1 + Y - EU)/(1+mu).
        n1 = max(n1 + data_sq + 2.0 * (y1 - u_q), 0.0) / (1.0 + mu) ** 2
        y1 = (y1 + y_sq - ety_u) / (1.0 + mu)
        q = (q + ety - gu) / (1.0 + mu)
        d2 -= u - v2_new
        d3 -= v2w - v3
        d4 -= u - v4_new
        d5 -= u - v5_new
        p, v2, v4, v5 = p_new, v2_new, v4_new, v5_new

        objective[k] = 0.5 * data_sq + lam * float(np.abs(u @ w).sum())
        primal_scale = max(1.0, math.sqrt(
            u_gu + 3.0 * float(np.vdot(u, u)) + float(np.vdot(v2w, v2w))))
        dual_scale = max(1.0, mu * float(np.linalg.norm(q + d2 + d4 + d5)))
        residuals[k, 0] = primal / primal_scale
        residuals[k, 1] = dual / dual_scale
        if residuals[k, 0] <= options.tolerance and residuals[k, 1] <= options.tolerance:
            converged = True
            used = k + 1
            break

    return UnmixResult(
        abundances=constrain_abundances(u, cube.dims),
        objective_trace=objective[:used].copy(),
        residual_trace=residuals[:used].copy(),
        iterations_used=used,
        converged=converged,
    )


def reweighted_unmix(cube: SpectralCube, endmembers: EndmemberLibrary,
                     cfg: WeightConfig, options: SolverOptions,
                     dsm: SurfaceModel | None = None) -> UnmixResult:
    """Outer loop for abundance-derived weights.

    Starts from uniform weights (kind ``abund``) or pure height weights
    (kind ``abund-dsm``), then alternates a full ADMM solve with weight
    recomputation from the solved abundances. Stops when the relative
    Frobenius change of the abundances falls below
    ``options.outer_tolerance`` or after ``options.outer_max`` solves.
    """
    if not cfg.kind.uses_abundances:
        raise ValidationError(
            f"reweighted_unmix requires an abundance-based kind, got {cfg.kind.value}")
    if cfg.kind is WeightKind.ABUND_DSM:
        if dsm is None:
            raise ValidationError("kind abund-dsm requires a surface model")
        weights = weights_from_dsm(dsm, cfg)
    else:
        weights = uniform_weights(cube.dims)

    result = None
    previous = None
    for _ in range(options.outer_max):
        operator = build_difference_operator(weights, cube.dims)
        result = unmix(cube, endmembers, operator, options)
        current = result.abundances.data
        if previous is not None:
            denom = max(float(np.linalg.norm(previous)), 1e-300)
            change = float(np.linalg.norm(current - previous)) / denom
            if change < options.outer_tolerance:
                break
        previous = current
        weights = build_weights(cfg, cube.dims, dsm=dsm,
                                abundances=result.abundances)
    return result
