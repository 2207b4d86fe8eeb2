"""Principal components of encoding weights and their projections."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data_model import (FeatureMatrix, ScoreMap, WeightSet, dump_json,
                         load_json, read_payload, write_payload)
from .errors import ArgError
from .ridge import raw_space_weights


def collapse_delays(weights: WeightSet, raw_space: bool = True) -> np.ndarray:
    """Average beta over the delay blocks, giving a k x m matrix.

    ``raw_space`` maps the weights back to raw feature/response units
    first, so projections are comparable across models whose feature
    standardization differs.
    """
    beta = raw_space_weights(weights) if raw_space else weights.beta
    d, k = weights.n_delays, weights.k
    return beta.reshape(d, k, -1).mean(axis=0)


def select_top_voxels(score: ScoreMap, n: int, criterion: str = "value",
                      other: ScoreMap | None = None) -> np.ndarray:
    """Indices of the top-n voxels under the given criterion.

    value:    top n by the score itself.
    min_pair: top n by elementwise min(score, other) - "multimodal" voxels.
    max_pair: top n by elementwise max(score, other) AFTER excluding the
              min_pair set of the same size - "unimodal" voxels.
    NaN voxels never qualify. Ties break toward the lower voxel index.
    """
    if criterion not in ("value", "min_pair", "max_pair"):
        raise ArgError(f"unknown criterion {criterion!r}")
    if criterion != "value" and other is None:
        raise ArgError(f"criterion {criterion!r} needs the second score map")
    if other is not None and other.n_voxels != score.n_voxels:
        raise ArgError("score maps cover different voxel sets")

    def top_n(values: np.ndarray, n: int, exclude=None) -> np.ndarray:
        values = values.copy()
        if exclude is not None:
            values[exclude] = np.nan
        valid = np.isfinite(values)
        if n > valid.sum():
            raise ArgError(f"asked for {n} voxels but only {int(valid.sum())} usable")
        ranked = np.where(valid, -values, np.inf)
        return np.sort(np.argsort(ranked, kind="stable")[:n])

    if criterion == "value":
        return top_n(score.values, n)
    combined_min = np.minimum(score.values, other.values)
    if criterion == "min_pair":
        return top_n(combined_min, n)
    multimodal = top_n(combined_min, n)
    combined_max = np.maximum(score.values, other.values)
    return top_n(combined_max, n, exclude=multimodal)


@dataclass(eq=False)
class PcaBasis:
    """Orthonormal components of centered weights, voxels as observations."""

    components: np.ndarray          # k x k, columns ordered by variance
    mean: np.ndarray                # k
    explained_variance: np.ndarray  # k, nonincreasing
    n_observations: int
    rank: int

    def __post_init__(self):
        self.components = np.ascontiguousarray(self.components, dtype=np.float64)
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        self.explained_variance = np.ascontiguousarray(self.explained_variance,
                                                       dtype=np.float64)

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def explained_ratio(self) -> np.ndarray:
        total = self.explained_variance.sum()
        return self.explained_variance / total if total > 0 else self.explained_variance


def fit_pca(collapsed: np.ndarray, normalize_voxels: bool = False) -> PcaBasis:
    """PCA of collapsed weights with voxels as observations.

    The voxel-by-feature matrix is mean-centered (optionally each voxel
    is z-scored first) and decomposed by SVD. Components are oriented so
    their largest-magnitude entry is positive; components beyond the
    numerical rank are retained but flagged through ``rank`` and
    near-zero explained variance.
    """
    collapsed = np.asarray(collapsed, dtype=np.float64)
    if collapsed.ndim != 2:
        raise ArgError("collapsed weights must be k x n_voxels")
    k, n_vox = collapsed.shape
    if n_vox < k + 1:
        raise ArgError(f"need at least {k + 1} voxels for a {k}-dim PCA, got {n_vox}")
    obs = collapsed.T.copy()
    if normalize_voxels:
        sd = obs.std(axis=1, keepdims=True)
        obs = (obs - obs.mean(axis=1, keepdims=True)) / np.where(sd <= 1e-12, 1.0, sd)
    mean = obs.mean(axis=0)
    centered = obs - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt.T
    explained = s ** 2 / (n_vox - 1)
    rank = int((s > (s[0] * 1e-12 if s.size else 0)).sum())
    # deterministic orientation: largest-|entry| coordinate positive
    flip = np.sign(components[np.argmax(np.abs(components), axis=0),
                              np.arange(components.shape[1])])
    flip[flip == 0] = 1.0
    components = components * flip
    return PcaBasis(components=components, mean=mean, explained_variance=explained,
                    n_observations=n_vox, rank=rank)


def _check_component(basis: PcaBasis, component: int) -> None:
    if not 0 <= component < basis.components.shape[1]:
        raise ArgError(f"component {component} out of range "
                       f"[0, {basis.components.shape[1]})")


def project_features(features: FeatureMatrix, basis: PcaBasis,
                     component: int) -> np.ndarray:
    """Centered dot product of each feature row with one component."""
    if features.k != basis.k:
        raise ArgError(f"features have k={features.k}, basis has k={basis.k}")
    _check_component(basis, component)
    return (features.data - basis.mean) @ basis.components[:, component]


def project_weights(collapsed: np.ndarray, basis: PcaBasis,
                    component: int, source: str = "") -> ScoreMap:
    """Centered projection of each voxel's collapsed weights onto a PC."""
    collapsed = np.asarray(collapsed, dtype=np.float64)
    if collapsed.shape[0] != basis.k:
        raise ArgError(f"weights have k={collapsed.shape[0]}, basis has k={basis.k}")
    _check_component(basis, component)
    values = basis.components[:, component] @ (collapsed - basis.mean[:, None])
    return ScoreMap(values=values, kind="pc_projection",
                    source=source or f"pc{component}")


def project_weights_many(collapsed: np.ndarray, basis: PcaBasis,
                         components) -> np.ndarray:
    """Stacked projections, one row per requested component."""
    return np.stack([project_weights(collapsed, basis, c).values
                     for c in components])


def save_basis(basis: PcaBasis, path) -> None:
    os.makedirs(path, exist_ok=True)
    write_payload(os.path.join(path, "components.bin"), basis.components)
    write_payload(os.path.join(path, "mean.bin"), basis.mean[None, :])
    write_payload(os.path.join(path, "explained.bin"),
                  basis.explained_variance[None, :])
    dump_json(os.path.join(path, "basis.json"),
              {"k": basis.k, "n_observations": basis.n_observations,
               "rank": basis.rank})


def load_basis(path) -> PcaBasis:
    meta = load_json(os.path.join(path, "basis.json"))
    components, _ = read_payload(os.path.join(path, "components.bin"))
    mean, _ = read_payload(os.path.join(path, "mean.bin"))
    explained, _ = read_payload(os.path.join(path, "explained.bin"))
    return PcaBasis(components=components, mean=mean[0],
                    explained_variance=explained[0],
                    n_observations=meta["n_observations"], rank=meta["rank"])
