"""SoftImpute matrix completion and the holdout machinery used to score it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import substream
from .model import FeatureMatrix, ValidationError


class CompletionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class IncompleteRealMatrix:
    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        observed = np.array(self.observed, dtype=bool)
        if values.ndim != 2 or values.shape != observed.shape:
            raise CompletionError("values and observed mask must be 2-D and the same shape")
        if np.isnan(values[observed]).any():
            raise CompletionError("observed cells must hold numbers")
        values[~observed] = np.nan
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)

    @classmethod
    def from_nan(cls, values) -> "IncompleteRealMatrix":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, ~np.isnan(values))

    @classmethod
    def from_feature_matrix(cls, m: FeatureMatrix) -> "IncompleteRealMatrix":
        return cls(m.values, m.observed)

    @property
    def shape(self):
        return self.values.shape

    def filled(self, fill=0.0) -> np.ndarray:
        return np.where(self.observed, self.values, fill)


@dataclass(frozen=True)
class CompletionConfig:
    """Hyperparameters for :func:`soft_impute_path`.

    ``lambda_grid=None`` means the data-driven default: 10 geometric steps
    from the top singular value of the zero-filled observed matrix down to
    1/100 of it.
    """

    lambda_grid: tuple[float, ...] | None = None
    tolerance: float = 1e-5
    max_iterations: int = 200
    validation_fraction: float = 0.05
    seed: int = 0
    grid_size: int = 10
    grid_ratio: float = 0.01

    def __post_init__(self):
        if self.lambda_grid is not None:
            grid = tuple(float(x) for x in self.lambda_grid)
            if not grid:
                raise CompletionError("lambda_grid is empty")
            if any(x < 0 for x in grid):
                raise CompletionError("lambda_grid values must be non-negative")
            if any(a <= b for a, b in zip(grid, grid[1:])):
                raise CompletionError("lambda_grid must be strictly descending")
            object.__setattr__(self, "lambda_grid", grid)
        if not self.tolerance > 0:
            raise CompletionError("tolerance must be positive")
        if self.max_iterations < 1:
            raise CompletionError("max_iterations must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise CompletionError("validation_fraction must lie in (0,1)")

    def to_dict(self) -> dict:
        return {
            "lambda_grid": list(self.lambda_grid) if self.lambda_grid is not None else None,
            "tolerance": self.tolerance,
            "max_iterations": self.max_iterations,
            "validation_fraction": self.validation_fraction,
            "seed": self.seed,
            "grid_size": self.grid_size,
            "grid_ratio": self.grid_ratio,
        }


def _svd(a: np.ndarray):
    """Thin SVD with a fixed sign convention: the largest-magnitude entry of
    every left singular vector is non-negative."""
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if u.size:
        pivot = np.argmax(np.abs(u), axis=0)
        signs = np.where(u[pivot, np.arange(u.shape[1])] < 0, -1.0, 1.0)
        u = u * signs
        vt = vt * signs[:, None]
    return u, s, vt


def svt(a: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Singular value soft-thresholding; returns (matrix, nuclear norm)."""
    u, s, vt = _svd(a)
    # shrunk values below the numerical-rank cutoff are SVD rounding, not signal
    cutoff = (s[0] if s.size else 0.0) * max(a.shape) * np.finfo(np.float64).eps
    s = np.maximum(s - lam, 0.0)
    keep = s > cutoff
    if not keep.any():
        return np.zeros_like(a), 0.0
    return (u[:, keep] * s[keep]) @ vt[keep], float(s[keep].sum())


def objective(x: IncompleteRealMatrix, z: np.ndarray, lam: float) -> float:
    """0.5 * ||P_obs(X - Z)||_F^2 + lam * ||Z||_*"""
    resid = np.where(x.observed, x.values - z, 0.0)
    nuc = np.linalg.svd(z, compute_uv=False).sum()
    return 0.5 * float((resid ** 2).sum()) + lam * float(nuc)


@dataclass(frozen=True, eq=False)
class SoftImputeResult:
    completed: np.ndarray
    iterate: np.ndarray
    iterations: int
    converged: bool
    objectives: tuple[float, ...] = ()


def soft_impute(x: IncompleteRealMatrix, lam: float, tolerance: float = 1e-5,
                max_iterations: int = 200, init: np.ndarray | None = None,
                track_objective: bool = False) -> SoftImputeResult:
    """Iterate ``Z <- SVT_lam(P_obs(X) + P_unobs(Z))`` from ``init`` (zeros by default).

    Stops once ``||Z_new - Z||^2 / ||Z||^2 <= tolerance`` or after
    ``max_iterations``. ``completed`` carries the observed values verbatim;
    ``iterate`` is the raw low-rank solution (useful for warm starts).
    """
    if lam < 0:
        raise CompletionError("lambda must be non-negative")
    if not x.observed.any():
        raise CompletionError("cannot complete a matrix with no observed cells")
    obs = x.observed
    xo = x.filled(0.0)
    z = np.zeros(x.shape) if init is None else np.array(init, dtype=np.float64)
    objectives: list[float] = []
    if track_objective:
        objectives.append(objective(x, z, lam))
    converged = False
    it = 0
    while it < max_iterations:
        it += 1
        z_new, _ = svt(np.where(obs, xo, z), lam)
        if track_objective:
            objectives.append(objective(x, z_new, lam))
        num = float(((z_new - z) ** 2).sum())
        den = float((z ** 2).sum())
        z = z_new
        if num == 0.0 or (den > 0.0 and num / den <= tolerance):
            converged = True
            break
    completed = np.where(obs, xo, z)
    return SoftImputeResult(completed, z, it, converged, tuple(objectives))


def default_lambda_grid(x: IncompleteRealMatrix, size: int = 10, ratio: float = 0.01) -> tuple[float, ...]:
    smax = float(np.linalg.svd(x.filled(0.0), compute_uv=False)[0])
    if smax == 0.0:
        return (0.0,)
    return tuple(float(v) for v in np.geomspace(smax, smax * ratio, size))


@dataclass(frozen=True, eq=False)
class CompletionResult:
    completed: np.ndarray
    lambda_: float
    iterations: int
    converged: bool
    lambda_grid: tuple[float, ...] = ()
    validation_rmse: tuple[float, ...] = ()

    def summary(self) -> dict:
        return {
            "lambda": self.lambda_,
            "iterations": self.iterations,
            "converged": self.converged,
            "lambda_grid": list(self.lambda_grid),
            "validation_rmse": [None if math.isnan(v) else v for v in self.validation_rmse],
        }


def soft_impute_path(x: IncompleteRealMatrix, config: CompletionConfig = CompletionConfig()) -> CompletionResult:
    """Pick lambda on a held-out slice of the observed cells, then refit on all of them.

    The path is walked from the largest lambda down with warm starts; the final
    refit starts from the path solution at the chosen lambda.
    """
    if not x.observed.any():
        raise CompletionError("cannot complete a matrix with no observed cells")
    grid = config.lambda_grid or default_lambda_grid(x, config.grid_size, config.grid_ratio)
    obs_idx = np.flatnonzero(x.observed)
    n_val = int(math.floor(config.validation_fraction * obs_idx.size + 0.5))
    if len(grid) == 1 or n_val < 1 or n_val >= obs_idx.size:
        res = soft_impute(x, grid[0], config.tolerance, config.max_iterations)
        return CompletionResult(res.completed, grid[0], res.iterations, res.converged, tuple(grid))

    rng = substream(config.seed, "completion-validation")
    val_idx = np.sort(rng.choice(obs_idx, size=n_val, replace=False))
    fit_obs = x.observed.copy()
    fit_obs.flat[val_idx] = False
    fit = IncompleteRealMatrix(x.values, fit_obs)
    truth = x.values.flat[val_idx]

    z = None
    rmses: list[float] = []
    iterates: list[np.ndarray] = []
    for lam in grid:
        res = soft_impute(fit, lam, config.tolerance, config.max_iterations, init=z)
        z = res.iterate
        iterates.append(z)
        rmses.append(float(np.sqrt(np.mean((z.flat[val_idx] - truth) ** 2))))
    best = int(np.argmin(rmses))
    res = soft_impute(x, grid[best], config.tolerance, config.max_iterations, init=iterates[best])
    return CompletionResult(res.completed, grid[best], res.iterations, res.converged,
                            tuple(grid), tuple(rmses))


def threshold(values: np.ndarray) -> np.ndarray:
    """Binary decision at 0.5; ties go to 1."""
    return np.where(np.asarray(values) >= 0.5, 1.0, 0.0)


def complete_matrix(m: FeatureMatrix, config: CompletionConfig = CompletionConfig()) -> tuple[FeatureMatrix, CompletionResult]:
    """Complete any feature matrix as reals clamped to [0,1]; observed cells are kept.

    Binary input is returned thresholded at 0.5 (ties go to 1); continuous
    input stays continuous. Columns with no observed cell cannot be
    informed by the data and are completed like any other column.
    """
    if m.n_observed == 0:
        raise CompletionError("feature matrix has no observed cells")
    res = soft_impute_path(IncompleteRealMatrix.from_feature_matrix(m), config)
    out = np.clip(res.completed, 0.0, 1.0)
    if m.mode == "binary":
        out = threshold(out)
    out = np.where(m.observed, m.values, out)
    return m.replace_cells(out, np.ones(m.shape, bool)), res


def complete_binary(m: FeatureMatrix, config: CompletionConfig = CompletionConfig()) -> FeatureMatrix:
    if m.mode != "binary":
        raise ValidationError("complete_binary needs a binary-mode matrix")
    return complete_matrix(m, config)[0]


@dataclass(frozen=True)
class HoldoutMask:
    hidden: tuple[tuple[int, int, float], ...]
    fraction: float
    seed: int

    @property
    def rows(self) -> np.ndarray:
        return np.array([h[0] for h in self.hidden], dtype=np.intp)

    @property
    def cols(self) -> np.ndarray:
        return np.array([h[1] for h in self.hidden], dtype=np.intp)

    @property
    def truth(self) -> np.ndarray:
        return np.array([h[2] for h in self.hidden], dtype=np.float64)


def make_holdout(m: FeatureMatrix, fraction: float, seed: int) -> tuple[FeatureMatrix, HoldoutMask]:
    """Hide ``round(fraction * n_observed)`` uniformly chosen observed cells."""
    if not 0.0 < fraction < 1.0:
        raise CompletionError(f"holdout fraction {fraction} must lie in (0,1)")
    obs_idx = np.flatnonzero(m.observed)
    if obs_idx.size < 5:
        raise CompletionError(f"need at least 5 observed cells, have {obs_idx.size}")
    n_hide = int(math.floor(fraction * obs_idx.size + 0.5))
    rng = substream(seed, "holdout")
    chosen = np.sort(rng.choice(obs_idx, size=n_hide, replace=False))
    rows, cols = np.unravel_index(chosen, m.shape)
    hidden = tuple((int(r), int(c), float(m.values[r, c])) for r, c in zip(rows, cols))
    observed = m.observed.copy()
    observed[rows, cols] = False
    return m.replace_cells(m.values, observed), HoldoutMask(hidden, fraction, seed)


def hidden_predictions(m: FeatureMatrix, mask: HoldoutMask) -> np.ndarray:
    """Values of ``m`` at the hidden cells (NaN where still unobserved)."""
    r, c = mask.rows, mask.cols
    return np.where(m.observed[r, c], m.values[r, c], np.nan)


