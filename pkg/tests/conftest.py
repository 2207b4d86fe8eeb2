import numpy as np
import pytest

from xenc.data_model import FeatureMatrix, ResponseMatrix
from xenc.ridge import RidgeConfig
from xenc.temporal import DelaySpec, build_design


def rng(seed=0):
    return np.random.default_rng(seed)


def make_features(seed=0, t=40, k=5, scan_id="s0", modality="language",
                  layer=0, times=None):
    g = rng(seed)
    if times is None:
        times = np.arange(t, dtype=float)
    return FeatureMatrix(scan_id=scan_id, modality=modality, layer=layer,
                         sample_times=times, data=g.standard_normal((t, k)))


def make_responses(seed=0, t=40, m=6, scan_id="s0", tr=2.0):
    return ResponseMatrix(scan_id=scan_id, tr_seconds=tr,
                          data=rng(seed).standard_normal((t, m)))


def quick_ridge_cfg(**kw):
    kw.setdefault("lambda_grid", (1e-3, 1e-1, 1e1))
    kw.setdefault("n_cv_iters", 5)
    kw.setdefault("seed", 0)
    return RidgeConfig(**kw)


def world_scans(world, modality):
    """(design, response) pairs built through the real temporal pipeline."""
    spec = world.spec
    delays = DelaySpec(delays_seconds=spec.delays_seconds,
                       tr_seconds=spec.tr_seconds)
    return [(build_design(f, spec.t_per_scan, spec.tr_seconds, delays), r)
            for f, r in world.scans(modality)]


@pytest.fixture
def tmp_store(tmp_path):
    return tmp_path / "store"
