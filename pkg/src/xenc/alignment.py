"""Linear maps between the language and vision feature spaces.

Maps are estimated from paired rows (caption/image pairs) by ridge
regression with a single cross-validated lambda, and applied to feature
matrices before cross-modal prediction.
"""

from __future__ import annotations

import os

import numpy as np

from .data_model import (AlignmentMap, FeatureMatrix, dump_json, load_json,
                         read_payload, write_payload)
from .errors import ArgError
from .parallel import parallel_map
from .ridge import SvdRidge, holdout_chunks, pearson_columns
from .rng import substream


def fit_alignment(source_feats: np.ndarray, target_feats: np.ndarray,
                  lambda_grid=None, n_cv_iters: int = 20,
                  direction: str = "image_to_caption", layer: int = 0,
                  seed: int = 0, cv_chunk: int = 10,
                  threads: int = 1) -> AlignmentMap:
    """Ridge-regress target features on source features over paired rows.

    A single lambda is chosen by chunked CV on mean held-out per-dimension
    correlation. Both sides are centered for the fit; the intercept is
    the target mean minus the mapped source mean, so the returned map is
    exact on centered data.
    """
    src = np.asarray(source_feats, dtype=np.float64)
    tgt = np.asarray(target_feats, dtype=np.float64)
    if src.ndim != 2 or tgt.ndim != 2:
        raise ArgError("paired features must be 2-D")
    if src.shape[0] != tgt.shape[0]:
        raise ArgError(f"pair counts differ: {src.shape[0]} vs {tgt.shape[0]}")
    n = src.shape[0]
    if n < 10:
        raise ArgError(f"need at least 10 pairs, got {n}")
    grid = np.logspace(0, 5, 20) if lambda_grid is None else \
        np.asarray(lambda_grid, dtype=np.float64)

    mu_s = src.mean(axis=0)
    mu_t = tgt.mean(axis=0)
    cs = src - mu_s
    ct = tgt - mu_t

    # pairs are exchangeable, so small pair sets just use shorter chunks
    chunk = min(cv_chunk, max(1, n // 5))

    def one_iter(it):
        rng = substream(seed, "align_cv", it)
        held = holdout_chunks(n, chunk, 0.2, rng)
        dec = SvdRidge(cs[~held])
        uty = dec.u.T @ ct[~held]
        h = cs[held] @ dec.vt.T
        scores = np.empty(grid.size)
        for j, lam in enumerate(grid):
            pred = (h * dec.shrinkage(lam)) @ uty
            scores[j] = np.nanmean(pearson_columns(pred, ct[held]))
        return scores

    per_iter = parallel_map(one_iter, range(n_cv_iters), threads=threads)
    mean_scores = np.nanmean(np.stack(per_iter), axis=0)
    ranked = np.where(np.isnan(mean_scores), -np.inf, mean_scores)
    best = grid.size - 1 - int(np.argmax(ranked[::-1]))
    lam = float(grid[best])

    dec = SvdRidge(cs)
    weights = dec.solve(ct, lam)          # k_source x k_target
    matrix = weights.T                    # k_target x k_source
    intercept = mu_t - matrix @ mu_s
    return AlignmentMap(matrix=matrix, intercept=intercept,
                        direction=direction, layer=layer, fit_lambda=lam)


def apply_alignment(amap: AlignmentMap, features: FeatureMatrix) -> FeatureMatrix:
    """Map features into the target space, rewriting the modality tag."""
    if features.k != amap.k_source:
        raise ArgError(
            f"features have k={features.k}, map expects k_source={amap.k_source}"
        )
    if features.modality != amap.source_modality:
        raise ArgError(
            f"map goes {amap.source_modality}->{amap.target_modality} but "
            f"features are {features.modality}"
        )
    if features.layer != amap.layer:
        raise ArgError(
            f"map was fit for layer {amap.layer}, features are layer {features.layer}"
        )
    mapped = features.data @ amap.matrix.T + amap.intercept
    return FeatureMatrix(scan_id=features.scan_id, modality=amap.target_modality,
                         layer=features.layer, sample_times=features.sample_times,
                         data=mapped)


def save_alignment(amap: AlignmentMap, path) -> None:
    os.makedirs(path, exist_ok=True)
    write_payload(os.path.join(path, "matrix.bin"), amap.matrix)
    write_payload(os.path.join(path, "intercept.bin"), amap.intercept[None, :])
    dump_json(os.path.join(path, "alignment.json"), {
        "direction": amap.direction,
        "layer": amap.layer,
        "fit_lambda": amap.fit_lambda,
        "k_source": amap.k_source,
        "k_target": amap.k_target,
    })


def load_alignment(path) -> AlignmentMap:
    meta = load_json(os.path.join(path, "alignment.json"))
    matrix, _ = read_payload(os.path.join(path, "matrix.bin"))
    intercept, _ = read_payload(os.path.join(path, "intercept.bin"))
    return AlignmentMap(matrix=matrix, intercept=intercept[0],
                        direction=meta["direction"], layer=meta["layer"],
                        fit_lambda=meta["fit_lambda"])
