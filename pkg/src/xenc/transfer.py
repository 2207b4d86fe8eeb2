"""Within- and cross-modality scoring, layer/sign bootstrap, ratio maps."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data_model import (STIMULUS_NAME, DesignMatrix, ResponseMatrix, ScoreMap,
                         WeightSet, dump_json, fmt_float, load_json,
                         read_payload, write_payload)
from .errors import ArgError
from .ridge import RidgeConfig, fit_encoding_model, predict, score_correlation


@dataclass(eq=False)
class ScanScoreTable:
    """Complete (layer, test scan, voxel) grid of correlation scores."""

    values: np.ndarray            # (n_layers, n_scans, n_voxels)
    layers: tuple
    scan_ids: tuple

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.layers = tuple(int(l) for l in self.layers)
        self.scan_ids = tuple(str(s) for s in self.scan_ids)
        if self.values.ndim != 3:
            raise ArgError("score table must be (layers, scans, voxels)")
        if self.values.shape[0] != len(self.layers):
            raise ArgError("layer axis does not match layer labels")
        if self.values.shape[1] != len(self.scan_ids):
            raise ArgError("scan axis does not match scan labels")
        if np.any(np.isinf(self.values)):
            raise ArgError("score table may hold NaN but not Inf")

    @property
    def n_voxels(self) -> int:
        return self.values.shape[2]

    def mean_map(self, layer_index: int = 0, source: str = "") -> ScoreMap:
        return ScoreMap(values=self.values[layer_index].mean(axis=0),
                        kind="correlation", source=source)


def stack_tables(tables: list[ScanScoreTable]) -> ScanScoreTable:
    """Merge single-layer tables (same scans) into one multi-layer table."""
    if not tables:
        raise ArgError("no tables to stack")
    scan_ids = tables[0].scan_ids
    for t in tables:
        if t.scan_ids != scan_ids:
            raise ArgError("tables cover different scan sets")
    order = np.argsort([t.layers[0] for t in tables], kind="stable")
    values = np.concatenate([tables[i].values for i in order], axis=0)
    layers = tuple(tables[i].layers[0] for i in order)
    return ScanScoreTable(values=values, layers=layers, scan_ids=scan_ids)


def within_modality_scores(scans: list[tuple[DesignMatrix, ResponseMatrix]],
                           cfg: RidgeConfig, threads: int = 1,
                           return_predictions: bool = False):
    """Leave-one-scan-out within-modality performance.

    For each held-out scan an encoding model is fit on the remaining
    scans and scored on the held-out one; the ScoreMap is the mean
    correlation per voxel across held-out scans.
    """
    if len(scans) < 2:
        raise ArgError("within-modality scoring needs at least 2 scans")
    designs = [d for d, _ in scans]
    responses = [r for _, r in scans]
    layer = designs[0].source_layer
    rows = []
    preds = []
    for j in range(len(scans)):
        train_d = designs[:j] + designs[j + 1:]
        train_r = responses[:j] + responses[j + 1:]
        model = fit_encoding_model(train_d, train_r, cfg, threads=threads)
        pred = predict(model, designs[j])
        rows.append(score_correlation(pred, responses[j].data).values)
        if return_predictions:
            preds.append(pred)
    modality = designs[0].modality
    tag = f"{STIMULUS_NAME[modality]}→{STIMULUS_NAME[modality]}"
    table = ScanScoreTable(values=np.stack(rows)[None, :, :], layers=(layer,),
                           scan_ids=tuple(d.scan_id for d in designs))
    score = table.mean_map(source=tag)
    if return_predictions:
        return table, score, preds
    return table, score


def cross_modality_scores(model: WeightSet,
                          aligned_target_designs: list[DesignMatrix],
                          target_responses: list[ResponseMatrix],
                          allow_unaligned: bool = False):
    """Score a source-modality model on target-modality scans.

    Designs whose modality differs from the model's must already have
    been passed through apply_alignment (which rewrites the modality
    tag); passing raw cross-modal designs is an error unless explicitly
    allowed, so the alignment step cannot be skipped silently.
    """
    if len(aligned_target_designs) != len(target_responses) or not target_responses:
        raise ArgError("need one response matrix per design")
    rows = []
    for d, r in zip(aligned_target_designs, target_responses):
        if d.scan_id != r.scan_id:
            raise ArgError(f"scan ids differ: {d.scan_id!r} vs {r.scan_id!r}")
        if d.modality != model.modality and not allow_unaligned:
            raise ArgError(
                f"design {d.scan_id!r} is {d.modality} but the model was "
                f"trained on {model.modality}; apply an AlignmentMap first "
                "(or pass allow_unaligned=True)"
            )
        rows.append(score_correlation(predict(model, d), r.data).values)
    table = ScanScoreTable(values=np.stack(rows)[None, :, :],
                           layers=(model.layer,),
                           scan_ids=tuple(d.scan_id for d in aligned_target_designs))
    return table, table.mean_map(source="cross")


def _loo_means(values: np.ndarray) -> np.ndarray:
    """Leave-one-scan-out means along the scan axis, NaN-aware."""
    finite = np.isfinite(values)
    filled = np.where(finite, values, 0.0)
    total = filled.sum(axis=-2, keepdims=True)
    count = finite.sum(axis=-2, keepdims=True)
    loo_sum = total - filled
    loo_cnt = count - finite.astype(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(loo_cnt > 0, loo_sum / loo_cnt, np.nan)
    return out


def layer_select_bootstrap(table: ScanScoreTable,
                           source: str = "layer_selected") -> ScoreMap:
    """Per-voxel best-layer scores via the leave-one-scan-out bootstrap.

    For each test scan j the best layer is chosen by mean score across
    the other scans (ties -> lower layer index) and scan j is scored
    with that layer; scores are then averaged over j.
    """
    values = table.values
    n_layers, n_scans, _ = values.shape
    if n_layers < 1:
        raise ArgError("need at least one layer")
    if n_scans < 2:
        import warnings
        warnings.warn("single test scan: falling back to the global argmax layer")
        ranked = np.where(np.isfinite(values), values, -np.inf)
        best = np.argmax(ranked[:, 0, :], axis=0)
        picked = values[best, 0, np.arange(values.shape[2])]
        return ScoreMap(values=picked, kind="correlation", source=source)
    loo = _loo_means(values)                      # (L, S, m)
    ranked = np.where(np.isfinite(loo), loo, -np.inf)
    best = np.argmax(ranked, axis=0)              # (S, m); first max = lowest layer
    scans = np.arange(n_scans)[:, None]
    voxels = np.arange(values.shape[2])[None, :]
    picked = values[best, scans, voxels]          # (S, m)
    return ScoreMap(values=picked.mean(axis=0), kind="correlation", source=source)


def sign_flip_correct(table: ScanScoreTable, source: str = "sign_corrected") -> ScoreMap:
    """Correct inverted-tuning voxels using held-out scans.

    For each test scan, a voxel's score is negated when its mean score
    on the other scans is negative (equivalent to negating the weights,
    since Pearson r is sign-equivariant under prediction negation).
    """
    if table.values.shape[0] != 1:
        raise ArgError("sign correction expects a single-layer table")
    if table.values.shape[1] < 2:
        raise ArgError("sign correction needs at least 2 test scans")
    values = table.values[0]                      # (S, m)
    loo = _loo_means(values)
    corrected = np.where(loo < 0, -values, values)
    return ScoreMap(values=corrected.mean(axis=0), kind="correlation", source=source)


def performance_ratio(cross: ScoreMap, within: ScoreMap,
                      significant: np.ndarray,
                      source: str = "cross/within") -> ScoreMap:
    """Cross/within score ratio on significant voxels; others NaN."""
    if cross.n_voxels != within.n_voxels or significant.shape != (cross.n_voxels,):
        raise ArgError("cross, within, and mask must cover the same voxels")
    ok = significant & (np.abs(within.values) > 1e-6) \
        & np.isfinite(cross.values) & np.isfinite(within.values)
    values = np.full(cross.n_voxels, np.nan)
    values[ok] = cross.values[ok] / within.values[ok]
    return ScoreMap(values=values, kind="ratio", source=source)


@dataclass
class FeatureSetComparison:
    difference: ScoreMap
    mean_a: float
    mean_b: float
    mean_difference: float
    n_voxels_used: int


def compare_feature_sets(run_a: ScoreMap, run_b: ScoreMap) -> FeatureSetComparison:
    """Per-voxel A-B difference map plus cortex means (NaN excluded)."""
    if run_a.n_voxels != run_b.n_voxels:
        raise ArgError("score maps cover different voxel sets")
    diff = run_a.values - run_b.values
    ok = np.isfinite(run_a.values) & np.isfinite(run_b.values)
    mean_a = float(run_a.values[ok].mean()) if ok.any() else float("nan")
    mean_b = float(run_b.values[ok].mean()) if ok.any() else float("nan")
    return FeatureSetComparison(
        difference=ScoreMap(values=diff, kind="difference",
                            source=f"{run_a.source} - {run_b.source}"),
        mean_a=mean_a, mean_b=mean_b,
        mean_difference=mean_a - mean_b if ok.any() else float("nan"),
        n_voxels_used=int(ok.sum()))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_table(table: ScanScoreTable, path) -> None:
    os.makedirs(path, exist_ok=True)
    n_layers, n_scans, m = table.values.shape
    write_payload(os.path.join(path, "values.bin"),
                  table.values.reshape(n_layers * n_scans, m))
    dump_json(os.path.join(path, "table.json"), {
        "layers": list(table.layers),
        "scan_ids": list(table.scan_ids),
        "n_voxels": m,
    })


def load_table(path) -> ScanScoreTable:
    meta = load_json(os.path.join(path, "table.json"))
    flat, _ = read_payload(os.path.join(path, "values.bin"))
    layers = meta["layers"]
    scan_ids = meta["scan_ids"]
    values = flat.reshape(len(layers), len(scan_ids), meta["n_voxels"])
    return ScanScoreTable(values=values, layers=tuple(layers),
                          scan_ids=tuple(scan_ids))


def save_scoremap(score: ScoreMap, path_prefix) -> None:
    """Write <prefix>.bin (XEF1 payload), <prefix>.json, <prefix>.csv."""
    write_payload(str(path_prefix) + ".bin", score.values[None, :])
    dump_json(str(path_prefix) + ".json",
              {"kind": score.kind, "source": score.source,
               "n_voxels": score.n_voxels,
               "n_nan": int(score.nan_mask.sum())})
    with open(str(path_prefix) + ".csv", "w", encoding="utf-8") as fh:
        fh.write("voxel_id,value\n")
        for i, v in enumerate(score.values):
            fh.write(f"{i},{fmt_float(v)}\n")


def load_scoremap(path_prefix) -> ScoreMap:
    meta = load_json(str(path_prefix) + ".json")
    values, _ = read_payload(str(path_prefix) + ".bin")
    return ScoreMap(values=values[0], kind=meta["kind"], source=meta["source"])
