"""Paired caption/image features for alignment fitting."""

from __future__ import annotations

import numpy as np

from xenc.data_model import FeatureMatrix
from xenc.errors import ArgError


def extract_pair_features(captions: list[str], images: np.ndarray,
                          text_backend, image_backend, layer: int,
                          scan_id: str = "pairs"):
    """Row i of both outputs comes from pair i.

    Caption features are mean-pooled word states; image features are the
    class-token state. Sample times are the pair indices (pairs carry no
    temporal structure).
    """
    images = np.asarray(images)
    if len(captions) != images.shape[0]:
        raise ArgError(f"{len(captions)} captions vs {images.shape[0]} images")
    if not captions:
        raise ArgError("empty pair list")
    lang_rows = np.stack([
        text_backend.sequence_state(caption.split(), layer)
        for caption in captions
    ])
    vis_rows = image_backend.frame_states(images, layer)
    times = np.arange(len(captions), dtype=np.float64)
    lang = FeatureMatrix(scan_id=scan_id, modality="language", layer=layer,
                         sample_times=times, data=lang_rows)
    vis = FeatureMatrix(scan_id=scan_id, modality="vision", layer=layer,
                        sample_times=times, data=vis_rows)
    return lang, vis
