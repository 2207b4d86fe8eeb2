"""Blockwise permutation significance tests, FDR, and paired t-tests.

Null distributions are built by resampling contiguous TR blocks with
replacement, which preserves the autocorrelation of the response series;
that is the entire reason the tests are blockwise rather than IID.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

from .data_model import ScoreMap, WeightSet, fmt_float
from .errors import ArgError, TrialError
from .parallel import parallel_map
from .pca import PcaBasis
from .ridge import SvdRidge, pearson_columns
from .rng import substream


@dataclass(frozen=True)
class PermConfig:
    block_trs: int = 10
    n_trials: int = 10000
    seed: int = 0
    fdr_q: float = 0.05

    def __post_init__(self):
        if self.block_trs < 1:
            raise ArgError("block_trs must be >= 1")
        if self.n_trials < 100:
            raise ArgError("n_trials must be >= 100")
        if not 0 < self.fdr_q < 1:
            raise ArgError("fdr_q must lie in (0, 1)")


def block_resample_rows(n_rows: int, block: int, rng: np.random.Generator) -> np.ndarray:
    """Row indices for one blockwise resampling trial.

    ceil(n/block) start indices are drawn uniformly from
    [0, n_rows - block] with replacement; the concatenated blocks are
    truncated to n_rows.
    """
    n_blocks = -(-n_rows // block)
    starts = rng.integers(0, n_rows - block + 1, size=n_blocks)
    rows = (starts[:, None] + np.arange(block)[None, :]).ravel()
    return rows[:n_rows]


def blockwise_null_scores(pred: np.ndarray, actual: np.ndarray,
                          cfg: PermConfig, threads: int = 1) -> np.ndarray:
    """Null correlation matrix (n_trials x n_voxels).

    Each trial correlates the fixed predictions against a block-permuted
    copy of the actual responses. Constant prediction columns yield NaN
    for every trial.
    """
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape:
        raise ArgError(f"shape mismatch {pred.shape} vs {actual.shape}")
    t = pred.shape[0]
    if t < 2 * cfg.block_trs:
        raise ArgError(f"need at least {2 * cfg.block_trs} rows, got {t}")

    pred_c = pred - pred.mean(axis=0)
    pred_n = np.sqrt(np.einsum("ij,ij->j", pred_c, pred_c))

    def one_trial(trial):
        rng = substream(cfg.seed, "perm", trial)
        rows = block_resample_rows(t, cfg.block_trs, rng)
        ap = actual[rows]
        ap -= ap.mean(axis=0)
        an = np.sqrt(np.einsum("ij,ij->j", ap, ap))
        denom = pred_n * an
        num = np.einsum("ij,ij->j", pred_c, ap)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), np.nan)

    trials = parallel_map(one_trial, range(cfg.n_trials), threads=threads)
    return np.stack(trials)


def bh_fdr(p) -> np.ndarray:
    """Benjamini-Hochberg step-up q-values (monotone, clipped to 1)."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ArgError("p must be a nonempty 1-D array")
    if np.any(~np.isfinite(p)) or p.min() < 0 or p.max() > 1:
        raise ArgError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(ranked[::-1])[::-1]
    q_sorted = np.minimum(q_sorted, 1.0)
    q = np.empty(m)
    q[order] = q_sorted
    return q


@dataclass
class SignificanceResult:
    p: ScoreMap
    q: ScoreMap
    mask: np.ndarray
    n_nan: int


def voxel_significance(true_scores: ScoreMap, null: np.ndarray,
                       cfg: PermConfig) -> SignificanceResult:
    """One-sided permutation p-values with BH-FDR control.

    p = (1 + #{null >= true}) / (1 + n_trials); NaN scores keep NaN
    p/q and are excluded from the FDR correction and the mask.
    """
    null = np.asarray(null, dtype=np.float64)
    if null.ndim != 2 or null.shape[1] != true_scores.n_voxels:
        raise ArgError("null matrix must be (n_trials, n_voxels)")
    n_trials = null.shape[0]
    true = true_scores.values
    with np.errstate(invalid="ignore"):
        exceed = (null >= true[None, :]).sum(axis=0)
    p = (1.0 + exceed) / (1.0 + n_trials)
    p = np.where(np.isnan(true), np.nan, p)
    q = np.full_like(p, np.nan)
    ok = np.isfinite(p)
    if ok.any():
        q[ok] = bh_fdr(p[ok])
    mask = np.zeros(p.shape, dtype=bool)
    mask[ok] = q[ok] < cfg.fdr_q
    return SignificanceResult(
        p=ScoreMap(values=p, kind="p_value", source=true_scores.source),
        q=ScoreMap(values=q, kind="q_value", source=true_scores.source),
        mask=mask, n_nan=int((~ok).sum()))


@dataclass
class TTestResult:
    t: float
    dof: int
    p: float
    degenerate: bool = False


def paired_t_test_one_sided(a, b) -> TTestResult:
    """Upper-tail paired t-test of mean(a - b) > 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ArgError("inputs must be equal-length 1-D arrays")
    n = a.size
    if n < 2:
        raise ArgError("need at least 2 paired observations")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    dof = n - 1
    if sd == 0.0:
        if mean > 0:
            return TTestResult(t=np.inf, dof=dof, p=0.0, degenerate=True)
        if mean < 0:
            return TTestResult(t=-np.inf, dof=dof, p=1.0, degenerate=True)
        return TTestResult(t=np.nan, dof=dof, p=np.nan, degenerate=True)
    t = mean / (sd / np.sqrt(n))
    return TTestResult(t=float(t), dof=dof, p=float(sstats.t.sf(t, dof)))


# ---------------------------------------------------------------------------
# PC spatial-correlation test
# ---------------------------------------------------------------------------

@dataclass
class PcCorrResult:
    components: tuple
    statistic: np.ndarray
    p: np.ndarray
    q: np.ndarray
    reject: np.ndarray
    null: np.ndarray          # (n_trials, n_components)
    n_retried: int


class _VisionRefitter:
    """Refits the vision model on (permuted) responses with a fixed design.

    The design SVD is computed once and the per-voxel lambdas of the
    original fit are reused, so a trial is a grouped solve plus a
    projection. Weights are returned collapsed over delays in raw
    feature units.
    """

    def __init__(self, designs, responses, weights: WeightSet,
                 basis: PcaBasis, components):
        if not designs or len(designs) != len(responses):
            raise ArgError("need one response matrix per design")
        x = np.vstack([d.data for d in designs])
        if x.shape[1] != weights.beta.shape[0]:
            raise ArgError("designs do not match the weight set")
        self.weights = weights
        self.basis = basis
        self.components = list(components)
        self.scan_rows = [r.data.shape[0] for r in responses]
        self.raw_responses = [r.data for r in responses]
        xz = (x - weights.feature_means) / weights.feature_scales
        self.dec = SvdRidge(xz)
        lam = weights.lambda_per_voxel
        self.lam_values, self.lam_groups = np.unique(lam, return_inverse=True)
        self.n_delays = weights.n_delays
        self.k = weights.k

    def refit_projections(self, per_scan_rows) -> np.ndarray:
        """Raw-space collapsed weights for permuted scans, projected on PCs."""
        parts = []
        raw_parts = []
        for raw, rows in zip(self.raw_responses, per_scan_rows):
            y = raw if rows is None else raw[rows]
            mu = y.mean(axis=0)
            sd = y.std(axis=0)
            sd = np.where(sd <= 1e-12, 1.0, sd)
            parts.append((y - mu) / sd)
            raw_parts.append(y)
        yz = np.vstack(parts)
        scales = np.vstack(raw_parts).std(axis=0)
        scales = np.where(scales <= 1e-12, 1.0, scales)
        uty = self.dec.u.T @ yz
        beta = np.empty((self.dec.vt.shape[1], yz.shape[1]))
        for j, lam in enumerate(self.lam_values):
            cols = self.lam_groups == j
            beta[:, cols] = self.dec.solve_from_projection(uty[:, cols], float(lam))
        raw_beta = (beta / self.weights.feature_scales[:, None]) * scales[None, :]
        collapsed = raw_beta.reshape(self.n_delays, self.k, -1).mean(axis=0)
        centered = collapsed - self.basis.mean[:, None]
        return self.basis.components[:, self.components].T @ centered


def pc_spatial_corr_test(lang_proj: np.ndarray, movie_designs, movie_responses,
                         basis: PcaBasis, components, voxel_set,
                         vision_weights: WeightSet, cfg: PermConfig,
                         threads: int = 1) -> PcCorrResult:
    """Test whether language/vision weight projections share spatial structure.

    The statistic per PC is the Pearson correlation over ``voxel_set``
    between the language projections and the projections of a vision
    model fit on the movie data. Null trials refit the vision model on
    block-resampled movie responses (per scan) with the original
    per-voxel lambdas and re-project. One-sided p per PC, BH-FDR across
    the tested PCs.
    """
    components = list(components)
    voxel_set = np.asarray(voxel_set, dtype=np.int64)
    if voxel_set.size < 2:
        raise ArgError("voxel_set must contain at least 2 voxels")
    lang_proj = np.asarray(lang_proj, dtype=np.float64)
    if lang_proj.shape[0] != len(components):
        raise ArgError("lang_proj must have one row per tested component")

    refitter = _VisionRefitter(movie_designs, movie_responses, vision_weights,
                               basis, components)
    lang_sel = lang_proj[:, voxel_set]

    def spatial_corr(vis_proj):
        return pearson_columns(lang_sel.T, vis_proj[:, voxel_set].T)

    true_stat = spatial_corr(refitter.refit_projections([None] * len(movie_responses)))
    if np.any(~np.isfinite(true_stat)):
        raise ArgError("true spatial correlation is undefined (constant projections)")

    retries = [0]

    def one_trial(trial):
        for attempt in range(3):
            rng = substream(cfg.seed, "pc_trial", trial, attempt)
            rows = [block_resample_rows(n, cfg.block_trs, rng)
                    for n in refitter.scan_rows]
            stat = spatial_corr(refitter.refit_projections(rows))
            if np.all(np.isfinite(stat)):
                if attempt:
                    retries[0] += attempt
                return stat
        raise TrialError(f"pc test trial {trial} failed 3 times")

    null = np.stack(parallel_map(one_trial, range(cfg.n_trials), threads=threads))
    exceed = (null >= true_stat[None, :]).sum(axis=0)
    p = (1.0 + exceed) / (1.0 + cfg.n_trials)
    q = bh_fdr(p)
    return PcCorrResult(components=tuple(components), statistic=true_stat,
                        p=p, q=q, reject=q < cfg.fdr_q, null=null,
                        n_retried=retries[0])


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def save_significance_csv(result: SignificanceResult, true_scores: ScoreMap,
                          path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("voxel_id,statistic,p,q,reject\n")
        for i in range(true_scores.n_voxels):
            fh.write(f"{i},{fmt_float(true_scores.values[i])},"
                     f"{fmt_float(result.p.values[i])},"
                     f"{fmt_float(result.q.values[i])},{int(result.mask[i])}\n")


def save_pc_csv(result: PcCorrResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("pc,statistic,p,q,reject\n")
        for i, c in enumerate(result.components):
            fh.write(f"{c},{fmt_float(result.statistic[i])},{fmt_float(result.p[i])},"
                     f"{fmt_float(result.q[i])},{int(result.reject[i])}\n")
