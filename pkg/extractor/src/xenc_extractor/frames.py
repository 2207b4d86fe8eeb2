"""Segment-level video features: class-token states averaged per segment."""

from __future__ import annotations

import math

import numpy as np

from xenc.data_model import FeatureMatrix
from xenc.errors import ArgError


def read_video_frames(path) -> tuple[np.ndarray, float]:
    """Decode a video container into (frames (n,H,W,3) RGB uint8, fps)."""
    import cv2
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise ArgError(f"cannot open video {path}")
    fps = cap.get(cv2.CAP_PROP_FPS) or 15.0
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(frame[:, :, ::-1])  # BGR -> RGB
    cap.release()
    if not frames:
        raise ArgError(f"no decodable frames in {path}")
    return np.stack(frames), float(fps)


def extract_frame_features(frames: np.ndarray, backend, layer: int,
                           fps: float = 15.0, segment_seconds: float = 2.0,
                           scan_id: str = "") -> FeatureMatrix:
    """One row per segment: the mean frame state over segment_seconds.

    At 15 fps and 2 s segments each row averages 30 per-frame class-token
    states; a trailing partial segment averages whatever frames remain.
    Row timestamps sit at the segment centers.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[0] == 0:
        raise ArgError("frames must be a nonempty (n, H, W, 3) array")
    if fps <= 0 or segment_seconds <= 0:
        raise ArgError("fps and segment_seconds must be positive")
    per_segment = max(1, round(fps * segment_seconds))
    n_frames = frames.shape[0]
    n_segments = math.ceil(n_frames / per_segment)

    states = backend.frame_states(frames, layer)
    rows = np.empty((n_segments, backend.hidden_size))
    times = np.empty(n_segments)
    for s in range(n_segments):
        lo = s * per_segment
        hi = min(n_frames, lo + per_segment)
        rows[s] = states[lo:hi].mean(axis=0)
        times[s] = (lo + (hi - lo) / 2.0) / fps
    return FeatureMatrix(scan_id=scan_id, modality="vision", layer=layer,
                         sample_times=times, data=rows)
