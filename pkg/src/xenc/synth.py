"""Synthetic worlds with known ground truth.

A world plants a latent semantic time series per scan, mixes it into
language and vision feature spaces, and builds responses by running the
same Lanczos + FIR pipeline the fitting code uses, so every number
downstream is checkable against the emitted truth: planted weights,
voxel labels (shared / inverted / unimodal / untuned), and the
cross-modal mixing matrices.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np

from .data_model import (FeatureMatrix, ResponseMatrix, dump_json, load_json,
                         read_payload, read_store, write_payload, write_store)
from .errors import ArgError
from .rng import substream
from .temporal import DelaySpec, LanczosConfig, lanczos_resample, make_delayed_design, tr_times

CROSS_MAPS = ("identity", "exact_affine", "noisy_affine", "nonlinear")
VOXEL_LABELS = ("shared", "inverted", "unimodal_language", "unimodal_vision",
                "untuned")


@dataclass(frozen=True)
class WorldSpec:
    seed: int = 0
    k_lang: int = 32
    k_vis: int = 32
    m: int = 500
    n_scans_per_modality: int = 3
    t_per_scan: int = 200
    tr_seconds: float = 2.0
    shared_dim: int = 8
    frac_shared_voxels: float = 1.0
    frac_inverted_voxels: float = 0.0
    frac_unimodal_voxels: float = 0.0
    noise_sd: float = 0.0
    cross_map: str = "exact_affine"
    # generation knobs beyond the core contract
    feature_noise_sd: float = 0.0
    n_pairs: int = 2000
    n_shared_channels: int | None = None     # None -> all tuned channels shared
    n_tuned_channels: int | None = None      # None -> voxels tune all shared_dim
    n_modality_channels: int | None = None   # None -> auto from frac_unimodal
    channel_tuning_decay: float = 1.0
    delays_tr: tuple = (1, 2, 3, 4)
    oversample: int = 4
    latent_f_lo_hz: float | None = None      # None -> one cycle per scan
    # "unit": unit-norm tuning per voxel, per-voxel signal sd normalized to 1.
    # "none": raw Gaussian tuning and one global response scale per modality,
    # so channel loadings stay exactly independent across voxels (needed when
    # spatial correlations of projections are the statistic under test).
    tuning_normalization: str = "unit"
    ar_phi: float = 0.8
    cross_noise_sd: float = 0.3
    nonlinear_gamma: float = 1.0
    layer: int = 0

    def __post_init__(self):
        object.__setattr__(self, "delays_tr", tuple(int(d) for d in self.delays_tr))
        fracs = (self.frac_shared_voxels, self.frac_inverted_voxels,
                 self.frac_unimodal_voxels)
        if any(f < 0 or f > 1 for f in fracs) or sum(fracs) > 1 + 1e-12:
            raise ArgError("voxel fractions must lie in [0,1] and sum to <= 1")
        if self.shared_dim > min(self.k_lang, self.k_vis):
            raise ArgError("shared_dim exceeds a feature dimension")
        if self.cross_map not in CROSS_MAPS:
            raise ArgError(f"unknown cross_map {self.cross_map!r}")
        if self.cross_map == "identity" and self.k_lang != self.k_vis:
            raise ArgError("identity cross_map needs k_lang == k_vis")
        if self.t_per_scan < 20:
            raise ArgError("t_per_scan must be >= 20")
        if max(self.delays_tr) >= self.t_per_scan:
            raise ArgError("largest delay does not fit in a scan")
        if self.n_extra_channels + self.shared_dim > min(self.k_lang, self.k_vis):
            raise ArgError("latent channels exceed a feature dimension")
        ntc = self.n_tuned_channels
        if ntc is not None and not 1 <= ntc <= self.shared_dim:
            raise ArgError("n_tuned_channels out of range")
        nsc = self.n_shared_channels
        if nsc is not None and not 0 <= nsc <= self.tuned_channels:
            raise ArgError("n_shared_channels out of range")
        if self.oversample < 1 or self.n_pairs < 10 or self.m < 1:
            raise ArgError("invalid world size")
        if self.tuning_normalization not in ("unit", "none"):
            raise ArgError("tuning_normalization must be 'unit' or 'none'")
        if not 0 <= self.ar_phi < 1:
            raise ArgError("ar_phi must lie in [0, 1)")

    @property
    def n_extra_channels(self) -> int:
        if self.n_modality_channels is not None:
            return self.n_modality_channels
        return max(2, self.shared_dim // 2) if self.frac_unimodal_voxels > 0 else 0

    @property
    def tuned_channels(self) -> int:
        return self.shared_dim if self.n_tuned_channels is None else self.n_tuned_channels

    @property
    def shared_channels(self) -> int:
        return self.tuned_channels if self.n_shared_channels is None \
            else self.n_shared_channels

    @property
    def delays_seconds(self) -> tuple:
        return tuple(c * self.tr_seconds for c in self.delays_tr)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delays_tr"] = list(self.delays_tr)
        return d

    @staticmethod
    def from_dict(d: dict) -> "WorldSpec":
        d = dict(d)
        if "delays_tr" in d:
            d["delays_tr"] = tuple(d["delays_tr"])
        return WorldSpec(**d)


@dataclass
class WorldTruth:
    beta_lang: np.ndarray           # (D*k_lang) x m, raw feature units
    beta_vis: np.ndarray            # (D*k_vis)  x m
    voxel_labels: list
    tuning_lang: np.ndarray         # channels x m
    tuning_vis: np.ndarray
    mixing_lang: np.ndarray         # k_lang x channels
    mixing_vis: np.ndarray          # k_vis  x channels
    cross_matrix: np.ndarray        # k_vis x k_lang (shared-subspace map)
    spec: WorldSpec


@dataclass
class World:
    spec: WorldSpec
    lang_features: list
    vis_features: list
    lang_responses: list
    vis_responses: list
    pair_lang: FeatureMatrix
    pair_vis: FeatureMatrix
    truth: WorldTruth

    def scans(self, modality: str):
        if modality == "language":
            return list(zip(self.lang_features, self.lang_responses))
        return list(zip(self.vis_features, self.vis_responses))


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def _well_conditioned(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    u = _orthonormal_columns(rng, rows, min(rows, cols))
    v = _orthonormal_columns(rng, cols, min(rows, cols))
    svals = rng.uniform(0.75, 1.5, size=min(rows, cols))
    return (u * svals) @ v.T


def _latent_series(rng: np.random.Generator, n_channels: int, times: np.ndarray,
                   f_lo: float, f_hi: float, n_freq: int = 24) -> np.ndarray:
    """Band-limited unit-variance channels: random sinusoid mixtures."""
    freqs = rng.uniform(f_lo, f_hi, size=(n_channels, n_freq))
    phases = rng.uniform(0, 2 * np.pi, size=(n_channels, n_freq))
    amps = rng.standard_normal((n_channels, n_freq))
    out = np.empty((times.size, n_channels))
    for c in range(n_channels):
        s = (amps[c] * np.cos(2 * np.pi * np.outer(times, freqs[c]) + phases[c])).sum(axis=1)
        s -= s.mean()
        sd = s.std()
        out[:, c] = s / (sd if sd > 1e-12 else 1.0)
    return out


def _nonlinear_code(x: np.ndarray, gamma: float) -> np.ndarray:
    # cubic distortion, rescaled to approximately unit variance for a
    # unit-variance input
    return (x + gamma * x ** 3) / np.sqrt(1.0 + 6.0 * gamma + 15.0 * gamma ** 2)


def _plant_tuning(spec: WorldSpec):
    """Voxel labels and per-voxel latent tuning for both modalities."""
    counts = [round(spec.frac_shared_voxels * spec.m),
              round(spec.frac_inverted_voxels * spec.m),
              round(spec.frac_unimodal_voxels * spec.m)]
    while sum(counts) > spec.m:
        counts[int(np.argmax(counts))] -= 1
    n_shared, n_inverted, n_unimodal = counts
    n_uni_lang = n_unimodal // 2
    n_uni_vis = n_unimodal - n_uni_lang
    labels = (["shared"] * n_shared + ["inverted"] * n_inverted
              + ["unimodal_language"] * n_uni_lang
              + ["unimodal_vision"] * n_uni_vis)
    labels += ["untuned"] * (spec.m - len(labels))

    s_dim, e_dim = spec.shared_dim, spec.n_extra_channels
    t_dim = spec.tuned_channels
    channels = s_dim + e_dim
    decay = spec.channel_tuning_decay ** np.arange(t_dim)
    rng = substream(spec.seed, "tuning")
    w_lang = np.zeros((channels, spec.m))
    w_vis = np.zeros((channels, spec.m))

    if spec.tuning_normalization == "unit":
        def unit(v):
            n = np.linalg.norm(v)
            return v / (n if n > 1e-12 else 1.0)
    else:
        def unit(v):
            return v

    for v, label in enumerate(labels):
        if label in ("shared", "inverted"):
            g = rng.standard_normal(t_dim) * decay
            w_lang[:t_dim, v] = unit(g)
            if label == "inverted":
                w_vis[:t_dim, v] = -w_lang[:t_dim, v]
            else:
                g2 = g.copy()
                fresh = rng.standard_normal(t_dim) * decay
                g2[spec.shared_channels:] = fresh[spec.shared_channels:]
                w_vis[:t_dim, v] = unit(g2)
        elif label == "unimodal_language":
            w_lang[s_dim:, v] = unit(rng.standard_normal(e_dim))
        elif label == "unimodal_vision":
            w_vis[s_dim:, v] = unit(rng.standard_normal(e_dim))
    return labels, w_lang, w_vis


def _mixing(spec: WorldSpec):
    """Feature-space mixing matrices for both modalities."""
    s_dim, e_dim = spec.shared_dim, spec.n_extra_channels
    a_full = _orthonormal_columns(substream(spec.seed, "mixing_lang"),
                                  spec.k_lang, s_dim + e_dim)
    m_cross = _well_conditioned(substream(spec.seed, "mixing_cross"),
                                spec.k_vis, spec.k_lang)
    if spec.cross_map == "identity":
        b_full = a_full.copy()
        m_cross = np.eye(spec.k_vis)
    else:
        b_shared = m_cross @ a_full[:, :s_dim]
        if spec.cross_map == "noisy_affine":
            noise = substream(spec.seed, "mixing_noise").standard_normal(
                b_shared.shape) / np.sqrt(spec.k_lang)
            b_shared = b_shared + spec.cross_noise_sd * noise
        b_extra = _orthonormal_columns(substream(spec.seed, "mixing_vis_extra"),
                                       spec.k_vis, e_dim) if e_dim else \
            np.zeros((spec.k_vis, 0))
        b_full = np.hstack([b_shared, b_extra])
    return a_full, b_full, m_cross


def _planted_beta(mixing: np.ndarray, tuning: np.ndarray, delays: int) -> np.ndarray:
    """Raw-space weights such that design @ beta reproduces the latent tuning."""
    pinv_t = mixing @ np.linalg.inv(mixing.T @ mixing)     # k x channels
    u = pinv_t @ tuning                                    # k x m
    profile = np.exp(-0.5 * np.arange(delays))
    return np.concatenate([c * u for c in profile], axis=0)


def _scan_latent(spec: WorldSpec, scan_id: str, times: np.ndarray) -> np.ndarray:
    # worlds meant for blockwise permutation tests should raise f_lo so the
    # latent decorrelates within a block; see PermConfig.block_trs
    f_lo = spec.latent_f_lo_hz
    if f_lo is None:
        f_lo = 1.0 / (spec.t_per_scan * spec.tr_seconds)
    f_hi = 0.8 * 0.5 / spec.tr_seconds
    channels = spec.shared_dim + spec.n_extra_channels
    return _latent_series(substream(spec.seed, "latent", scan_id), channels,
                          times, f_lo, f_hi)


def _scan_features(spec: WorldSpec, modality: str, scan_id: str,
                   latent: np.ndarray, mixing: np.ndarray,
                   times: np.ndarray) -> FeatureMatrix:
    code = latent
    if modality == "vision" and spec.cross_map == "nonlinear":
        code = latent.copy()
        code[:, :spec.shared_dim] = _nonlinear_code(code[:, :spec.shared_dim],
                                                    spec.nonlinear_gamma)
    data = code @ mixing.T
    if spec.feature_noise_sd > 0:
        rng = substream(spec.seed, "featnoise", modality, scan_id)
        data = data + spec.feature_noise_sd * rng.standard_normal(data.shape)
    return FeatureMatrix(scan_id=scan_id, modality=modality, layer=spec.layer,
                         sample_times=times, data=data)


def _responses_from_features(spec: WorldSpec, modality: str, features: list,
                             beta: np.ndarray):
    """Run the real temporal pipeline over noiseless features, then scale.

    The per-voxel noiseless signal is normalized to unit sd over the
    concatenated scans (one constant per voxel, so the model stays
    exact across scans) and Gaussian noise is added per TR.
    """
    delay_spec = DelaySpec(delays_seconds=spec.delays_seconds,
                           tr_seconds=spec.tr_seconds)
    grid = tr_times(spec.t_per_scan, spec.tr_seconds)
    signals = []
    for feat in features:
        resampled = lanczos_resample(feat, grid, LanczosConfig())
        design = make_delayed_design(resampled, delay_spec)
        signals.append(design.data @ beta)
    sd = np.vstack(signals).std(axis=0)
    sd = np.where(sd <= 1e-12, 1.0, sd)
    if spec.tuning_normalization == "none":
        # one scale for the whole modality keeps channel loadings
        # independent across voxels
        sd = np.full_like(sd, max(float(np.mean(sd)), 1e-12))
    beta_scaled = beta / sd[None, :]
    responses = []
    for feat, signal in zip(features, signals):
        noise = substream(spec.seed, "respnoise", modality,
                          feat.scan_id).standard_normal(signal.shape)
        responses.append(ResponseMatrix(
            scan_id=feat.scan_id, tr_seconds=spec.tr_seconds,
            data=signal / sd + spec.noise_sd * noise))
    return responses, beta_scaled


def _pair_features(spec: WorldSpec, a_full: np.ndarray, b_full: np.ndarray):
    s_dim, e_dim = spec.shared_dim, spec.n_extra_channels
    rng = substream(spec.seed, "pairs")
    z = rng.standard_normal((spec.n_pairs, s_dim))
    g_l = rng.standard_normal((spec.n_pairs, e_dim))
    g_v = rng.standard_normal((spec.n_pairs, e_dim))
    lang_code = np.hstack([z, g_l])
    vis_shared = _nonlinear_code(z, spec.nonlinear_gamma) \
        if spec.cross_map == "nonlinear" else z
    vis_code = np.hstack([vis_shared, g_v])
    lang = lang_code @ a_full.T
    vis = vis_code @ b_full.T
    if spec.feature_noise_sd > 0:
        lang = lang + spec.feature_noise_sd * rng.standard_normal(lang.shape)
        vis = vis + spec.feature_noise_sd * rng.standard_normal(vis.shape)
    times = np.arange(spec.n_pairs, dtype=np.float64)
    return (FeatureMatrix(scan_id="pairs", modality="language", layer=spec.layer,
                          sample_times=times, data=lang),
            FeatureMatrix(scan_id="pairs", modality="vision", layer=spec.layer,
                          sample_times=times, data=vis))


def generate_world(spec: WorldSpec) -> World:
    """Build a fully specified world; same spec -> identical output."""
    labels, w_lang, w_vis = _plant_tuning(spec)
    a_full, b_full, m_cross = _mixing(spec)
    d = len(spec.delays_tr)
    beta_lang = _planted_beta(a_full, w_lang, d)
    beta_vis = _planted_beta(b_full, w_vis, d)

    fine = tr_times(spec.t_per_scan * spec.oversample,
                    spec.tr_seconds / spec.oversample)
    lang_feats, vis_feats = [], []
    for i in range(spec.n_scans_per_modality):
        sid = f"story{i:02d}"
        latent = _scan_latent(spec, sid, fine)
        lang_feats.append(_scan_features(spec, "language", sid, latent, a_full, fine))
    for i in range(spec.n_scans_per_modality):
        sid = f"movie{i:02d}"
        latent = _scan_latent(spec, sid, fine)
        vis_feats.append(_scan_features(spec, "vision", sid, latent, b_full, fine))

    lang_resp, beta_lang = _responses_from_features(spec, "language",
                                                    lang_feats, beta_lang)
    vis_resp, beta_vis = _responses_from_features(spec, "vision",
                                                  vis_feats, beta_vis)
    pair_lang, pair_vis = _pair_features(spec, a_full, b_full)
    truth = WorldTruth(beta_lang=beta_lang, beta_vis=beta_vis,
                       voxel_labels=labels, tuning_lang=w_lang, tuning_vis=w_vis,
                       mixing_lang=a_full, mixing_vis=b_full,
                       cross_matrix=m_cross, spec=spec)
    return World(spec=spec, lang_features=lang_feats, vis_features=vis_feats,
                 lang_responses=lang_resp, vis_responses=vis_resp,
                 pair_lang=pair_lang, pair_vis=pair_vis, truth=truth)


def generate_null_world(spec: WorldSpec) -> World:
    """Features as usual, responses pure AR(1) noise (no feature dependence)."""
    world = generate_world(spec)
    phi = spec.ar_phi
    innov_sd = np.sqrt(1.0 - phi ** 2)
    for resp_list, modality in ((world.lang_responses, "language"),
                                (world.vis_responses, "vision")):
        for i, resp in enumerate(resp_list):
            rng = substream(spec.seed, "ar_noise", modality, resp.scan_id)
            eps = rng.standard_normal(resp.data.shape)
            y = np.empty_like(eps)
            y[0] = eps[0]
            for t in range(1, eps.shape[0]):
                y[t] = phi * y[t - 1] + innov_sd * eps[t]
            resp_list[i] = ResponseMatrix(scan_id=resp.scan_id,
                                          tr_seconds=resp.tr_seconds, data=y)
    d = len(spec.delays_tr)
    world.truth.beta_lang = np.zeros((d * spec.k_lang, spec.m))
    world.truth.beta_vis = np.zeros((d * spec.k_vis, spec.m))
    world.truth.voxel_labels = ["untuned"] * spec.m
    world.truth.tuning_lang = np.zeros_like(world.truth.tuning_lang)
    world.truth.tuning_vis = np.zeros_like(world.truth.tuning_vis)
    return world


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_TRUTH_ARRAYS = ("beta_lang", "beta_vis", "tuning_lang", "tuning_vis",
                 "mixing_lang", "mixing_vis", "cross_matrix")


def write_world(world: World, path) -> None:
    for feat in world.lang_features + world.vis_features:
        write_store(feat, os.path.join(path, "features", feat.scan_id))
    for resp in world.lang_responses + world.vis_responses:
        write_store(resp, os.path.join(path, "responses", resp.scan_id))
    write_store(world.pair_lang, os.path.join(path, "pairs", "language"))
    write_store(world.pair_vis, os.path.join(path, "pairs", "vision"))
    truth_dir = os.path.join(path, "truth")
    os.makedirs(truth_dir, exist_ok=True)
    for name in _TRUTH_ARRAYS:
        write_payload(os.path.join(truth_dir, f"{name}.bin"),
                      getattr(world.truth, name))
    dump_json(os.path.join(path, "truth.json"), {
        "spec": world.spec.to_dict(),
        "voxel_labels": world.truth.voxel_labels,
        "scan_ids": {
            "language": [f.scan_id for f in world.lang_features],
            "vision": [f.scan_id for f in world.vis_features],
        },
    })


def load_world(path) -> World:
    meta = load_json(os.path.join(path, "truth.json"))
    spec = WorldSpec.from_dict(meta["spec"])
    lang_feats = [read_store(os.path.join(path, "features", sid))
                  for sid in meta["scan_ids"]["language"]]
    vis_feats = [read_store(os.path.join(path, "features", sid))
                 for sid in meta["scan_ids"]["vision"]]
    lang_resp = [read_store(os.path.join(path, "responses", sid))
                 for sid in meta["scan_ids"]["language"]]
    vis_resp = [read_store(os.path.join(path, "responses", sid))
                for sid in meta["scan_ids"]["vision"]]
    pair_lang = read_store(os.path.join(path, "pairs", "language"))
    pair_vis = read_store(os.path.join(path, "pairs", "vision"))
    arrays = {}
    for name in _TRUTH_ARRAYS:
        arrays[name], _ = read_payload(os.path.join(path, "truth", f"{name}.bin"))
    truth = WorldTruth(voxel_labels=meta["voxel_labels"], spec=spec, **arrays)
    return World(spec=spec, lang_features=lang_feats, vis_features=vis_feats,
                 lang_responses=lang_resp, vis_responses=vis_resp,
                 pair_lang=pair_lang, pair_vis=pair_vis, truth=truth)
