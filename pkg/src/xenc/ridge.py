"""Per-voxel L2-regularized regression with chunked cross-validation.

One thin SVD of the design is shared across the whole lambda grid, which
is what makes the grid x voxel search tractable. Lambda values are
absolute (they enter the solve as-is); multi-scan fits scale the grid by
the number of concatenated scans so that duplicating the training data
leaves the solution unchanged.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from .data_model import (DesignMatrix, ResponseMatrix, ScoreMap, WeightSet,
                         check_consistent_voxels, dump_json, load_json,
                         read_payload, write_payload)
from .errors import ArgError, DataError
from .parallel import parallel_map
from .rng import substream

_ZERO_VAR_TOL = 1e-12


def default_lambda_grid() -> np.ndarray:
    return np.logspace(0.0, 5.0, 20)


@dataclass(frozen=True)
class RidgeConfig:
    lambda_grid: tuple = tuple(default_lambda_grid())
    n_cv_iters: int = 50
    holdout_fraction: float = 0.2
    cv_chunk_trs: int = 10
    seed: int = 0

    def __post_init__(self):
        grid = np.asarray(self.lambda_grid, dtype=np.float64)
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in grid))
        if grid.size < 1 or np.any(grid <= 0):
            raise ArgError("lambda_grid must be nonempty and strictly positive")
        if np.any(np.diff(grid) < 0):
            raise ArgError("lambda_grid must be sorted ascending")
        if self.n_cv_iters < 1:
            raise ArgError("n_cv_iters must be >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ArgError("holdout_fraction must lie in (0, 1)")
        if self.cv_chunk_trs < 1:
            raise ArgError("cv_chunk_trs must be >= 1")


def pearson_columns(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Pearson r; NaN where either column has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgError(f"shape mismatch {a.shape} vs {b.shape}")
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    na = np.sqrt(np.einsum("ij,ij->j", da, da))
    nb = np.sqrt(np.einsum("ij,ij->j", db, db))
    denom = na * nb
    num = np.einsum("ij,ij->j", da, db)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), np.nan)
    return r


def score_correlation(pred: np.ndarray, actual: np.ndarray,
                      source: str = "") -> ScoreMap:
    """Per-voxel linear correlation between predicted and actual series."""
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape:
        raise ArgError(f"shape mismatch {pred.shape} vs {actual.shape}")
    if pred.shape[0] < 3:
        raise ArgError("need at least 3 time points to correlate")
    return ScoreMap(values=pearson_columns(pred, actual), kind="correlation",
                    source=source)


class SvdRidge:
    """Thin SVD of a fixed design, reusable across lambdas and responses."""

    def __init__(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ArgError("design must be 2-D with at least 2 rows")
        if not np.all(np.isfinite(x)):
            raise DataError("design contains NaN or Inf")
        self.u, self.s, self.vt = np.linalg.svd(x, full_matrices=False)
        # singular values this far below the largest are treated as rank
        # deficiency, giving pseudo-inverse behavior at lambda -> 0
        smax = self.s[0] if self.s.size else 0.0
        self._live = self.s > smax * 1e-12

    def shrinkage(self, lam: float) -> np.ndarray:
        d = np.zeros_like(self.s)
        live = self._live
        d[live] = self.s[live] / (self.s[live] ** 2 + lam)
        return d

    def solve_from_projection(self, uty: np.ndarray, lam: float) -> np.ndarray:
        return (self.vt.T * self.shrinkage(lam)) @ uty

    def solve(self, y: np.ndarray, lam: float) -> np.ndarray:
        return self.solve_from_projection(self.u.T @ y, lam)


def svd_ridge_solve(x: np.ndarray, y: np.ndarray, lambdas) -> list[np.ndarray]:
    """Ridge weights for every lambda from a single thin SVD.

    Matches the closed form (X'X + lam*I)^-1 X'Y on well-conditioned
    inputs; rank-deficient directions are dropped, so lam=0 returns the
    minimum-norm least-squares solution.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ArgError("responses must be 2-D")
    if not np.all(np.isfinite(y)):
        raise DataError("responses contain NaN or Inf")
    dec = SvdRidge(x)
    if y.shape[0] != dec.u.shape[0]:
        raise ArgError("row counts of design and responses differ")
    uty = dec.u.T @ y
    out = []
    for lam in np.asarray(lambdas, dtype=np.float64):
        if lam < 0:
            raise ArgError(f"lambda must be >= 0, got {lam}")
        out.append(dec.solve_from_projection(uty, float(lam)))
    return out


def holdout_chunks(n: int, chunk: int, fraction: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Boolean held-out mask built from non-overlapping contiguous chunks.

    The row range is partitioned into consecutive chunks of ``chunk``
    rows (last one possibly short) and a random subset of chunks
    totaling about ``fraction * n`` rows is held out.
    """
    n_blocks = -(-n // chunk)
    n_hold = max(1, round(fraction * n / chunk))
    n_hold = min(n_hold, n_blocks - 1)
    picked = rng.choice(n_blocks, size=n_hold, replace=False)
    mask = np.zeros(n, dtype=bool)
    for b in picked:
        mask[b * chunk:min((b + 1) * chunk, n)] = True
    return mask


@dataclass
class LambdaSelection:
    lambda_per_voxel: np.ndarray
    selected_idx: np.ndarray
    cv_scores: np.ndarray          # (n_lambdas, n_voxels) mean held-out r
    lambda_grid: np.ndarray


def _cv_iteration(x, y, grid, chunk, fraction, seed, it):
    rng = substream(seed, "cv", it)
    held = holdout_chunks(x.shape[0], chunk, fraction, rng)
    dec = SvdRidge(x[~held])
    uty = dec.u.T @ y[~held]
    x_held = x[held]
    y_held = y[held]
    proj = x_held @ dec.vt.T
    scores = np.empty((grid.size, y.shape[1]))
    for j, lam in enumerate(grid):
        pred = (proj * dec.shrinkage(lam)) @ uty
        scores[j] = pearson_columns(pred, y_held)
    return scores


def cv_select_lambda(x: np.ndarray, y: np.ndarray, cfg: RidgeConfig,
                     lambda_grid=None, threads: int = 1) -> LambdaSelection:
    """Pick a lambda per voxel by repeated chunked holdout.

    Each iteration holds out random contiguous chunks of
    ``cv_chunk_trs`` rows totaling about ``holdout_fraction`` of the
    data, fits on the rest for every lambda, and scores held-out
    correlation per voxel. The per-voxel winner maximizes the mean
    held-out correlation across iterations, ties broken toward the
    larger lambda.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ArgError("row counts of design and responses differ")
    if x.shape[0] < 5 * cfg.cv_chunk_trs:
        raise ArgError(
            f"need at least {5 * cfg.cv_chunk_trs} rows for chunked CV, "
            f"got {x.shape[0]}"
        )
    grid = np.asarray(cfg.lambda_grid if lambda_grid is None else lambda_grid,
                      dtype=np.float64)

    per_iter = parallel_map(
        lambda it: _cv_iteration(x, y, grid, cfg.cv_chunk_trs,
                                 cfg.holdout_fraction, cfg.seed, it),
        range(cfg.n_cv_iters), threads=threads)
    # summed in iteration order so results are thread-count independent
    stack = np.stack(per_iter)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        mean_scores = np.nanmean(stack, axis=0)
    ranked = np.where(np.isnan(mean_scores), -np.inf, mean_scores)
    # argmax on the reversed grid finds the LAST maximum, i.e. the larger lambda
    selected = grid.size - 1 - np.argmax(ranked[::-1], axis=0)
    return LambdaSelection(lambda_per_voxel=grid[selected], selected_idx=selected,
                           cv_scores=mean_scores, lambda_grid=grid)


def _solve_grouped(dec: SvdRidge, y: np.ndarray, lambda_per_voxel: np.ndarray,
                   selected_idx: np.ndarray, grid: np.ndarray) -> np.ndarray:
    uty = dec.u.T @ y
    beta = np.empty((dec.vt.shape[1], y.shape[1]))
    for j in np.unique(selected_idx):
        cols = selected_idx == j
        beta[:, cols] = dec.solve_from_projection(uty[:, cols], float(grid[j]))
    return beta


def standardize_columns(x: np.ndarray):
    """Column z-scoring statistics; zero-variance columns get scale 1."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    dead = sd <= _ZERO_VAR_TOL
    sd = np.where(dead, 1.0, sd)
    return mu, sd, dead


def zscore_responses_per_scan(responses: list[ResponseMatrix]) -> np.ndarray:
    parts = []
    for resp in responses:
        mu = resp.data.mean(axis=0)
        sd = resp.data.std(axis=0)
        sd = np.where(sd <= _ZERO_VAR_TOL, 1.0, sd)
        parts.append((resp.data - mu) / sd)
    return np.vstack(parts)


def fit_encoding_model(designs: list[DesignMatrix],
                       responses: list[ResponseMatrix],
                       cfg: RidgeConfig, threads: int = 1) -> WeightSet:
    """Concatenate scans, standardize, cross-validate lambda, fit.

    Design columns are z-scored with pooled training statistics;
    responses are z-scored per scan before concatenation. Both sets of
    statistics are stored in the returned WeightSet (responses pooled
    across scans) so predictions can be mapped back to response units.
    """
    if not designs or len(designs) != len(responses):
        raise ArgError("need one response matrix per design matrix")
    for d, r in zip(designs, responses):
        if d.scan_id != r.scan_id:
            raise ArgError(f"scan ids differ: {d.scan_id!r} vs {r.scan_id!r}")
        if d.data.shape[0] != r.data.shape[0]:
            raise ArgError(f"row counts differ for scan {d.scan_id!r}")
    first = designs[0]
    for d in designs[1:]:
        if d.data.shape[1] != first.data.shape[1] \
                or d.delays_seconds != first.delays_seconds \
                or d.modality != first.modality \
                or d.source_layer != first.source_layer:
            raise ArgError("designs mix layers, modalities, or delay specs")
    check_consistent_voxels(responses)

    x = np.vstack([d.data for d in designs])
    mu, sd, dead = standardize_columns(x)
    if np.any(dead):
        warnings.warn(f"dropping {int(dead.sum())} zero-variance design columns; "
                      "their weights are fixed at 0")
    xz = (x - mu) / sd
    xz[:, dead] = 0.0
    yz = zscore_responses_per_scan(responses)

    # per-scan penalty: duplicated scans scale Gram and moments equally,
    # so scaling lambda by the scan count leaves the solution unchanged
    grid = np.asarray(cfg.lambda_grid, dtype=np.float64) * len(designs)
    sel = cv_select_lambda(xz, yz, cfg, lambda_grid=grid, threads=threads)
    dec = SvdRidge(xz)
    beta = _solve_grouped(dec, yz, sel.lambda_per_voxel, sel.selected_idx, grid)
    beta[dead, :] = 0.0

    raw = np.vstack([r.data for r in responses])
    resp_mu = raw.mean(axis=0)
    resp_sd = raw.std(axis=0)
    resp_sd = np.where(resp_sd <= _ZERO_VAR_TOL, 1.0, resp_sd)
    return WeightSet(beta=beta, lambda_per_voxel=sel.lambda_per_voxel,
                     feature_means=mu, feature_scales=sd,
                     response_means=resp_mu, response_scales=resp_sd,
                     modality=first.modality, layer=first.source_layer,
                     delays_seconds=first.delays_seconds)


def predict(weights: WeightSet, design: DesignMatrix) -> np.ndarray:
    """Predicted responses in (approximate) response units."""
    if design.data.shape[1] != weights.beta.shape[0]:
        raise ArgError(
            f"design has {design.data.shape[1]} columns, model expects "
            f"{weights.beta.shape[0]}"
        )
    xz = (design.data - weights.feature_means) / weights.feature_scales
    pred = xz @ weights.beta
    return pred * weights.response_scales + weights.response_means


def raw_space_weights(weights: WeightSet) -> np.ndarray:
    """Map standardized-space beta back to raw feature/response units."""
    return (weights.beta / weights.feature_scales[:, None]) * weights.response_scales[None, :]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_WS_ARRAYS = ("beta", "lambda_per_voxel", "feature_means", "feature_scales",
              "response_means", "response_scales")


def save_weightset(weights: WeightSet, path, extra_meta: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    for name in _WS_ARRAYS:
        arr = getattr(weights, name)
        write_payload(os.path.join(path, f"{name}.bin"),
                      arr if arr.ndim == 2 else arr[None, :])
    meta = {
        "modality": weights.modality,
        "layer": weights.layer,
        "delays_seconds": list(weights.delays_seconds),
        "n_features": weights.beta.shape[0],
        "n_voxels": weights.beta.shape[1],
    }
    if extra_meta:
        meta.update(extra_meta)
    dump_json(os.path.join(path, "weights.json"), meta)


def load_weightset(path) -> WeightSet:
    meta = load_json(os.path.join(path, "weights.json"))
    arrays = {}
    for name in _WS_ARRAYS:
        data, _ = read_payload(os.path.join(path, f"{name}.bin"))
        arrays[name] = data if name == "beta" else data[0]
    return WeightSet(modality=meta["modality"], layer=meta["layer"],
                     delays_seconds=tuple(meta["delays_seconds"]), **arrays)
