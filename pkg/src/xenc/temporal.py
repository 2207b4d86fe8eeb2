"""Temporal preprocessing: Lanczos resampling and FIR delay stacking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import DesignMatrix, FeatureMatrix
from .errors import ArgError


@dataclass(frozen=True)
class LanczosConfig:
    """Windowed-sinc filter parameters.

    ``cutoff_hz=None`` means "use the Nyquist frequency of the target
    grid", derived from the grid spacing at call time.
    """

    window_a: int = 3
    cutoff_hz: float | None = None

    def __post_init__(self):
        if self.window_a < 1:
            raise ArgError(f"window_a must be >= 1, got {self.window_a}")
        if self.cutoff_hz is not None and not self.cutoff_hz > 0:
            raise ArgError(f"cutoff_hz must be > 0, got {self.cutoff_hz}")


@dataclass(frozen=True)
class DelaySpec:
    """FIR delays, each an integer multiple of the TR."""

    delays_seconds: tuple = (2.0, 4.0, 6.0, 8.0)
    tr_seconds: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "delays_seconds",
                           tuple(float(d) for d in self.delays_seconds))
        if not self.tr_seconds > 0:
            raise ArgError("tr_seconds must be positive")
        if not self.delays_seconds:
            raise ArgError("need at least one delay")
        for d in self.delays_seconds:
            if d < 0:
                raise ArgError(f"delay {d} is negative")
        # verified again in delay_counts(); kept here so invalid specs
        # cannot be constructed
        self.delay_counts()

    def delay_counts(self) -> list[int]:
        """Delays as integer TR counts; ArgError if any ratio is non-integer."""
        counts = []
        for d in self.delays_seconds:
            ratio = d / self.tr_seconds
            n = round(ratio)
            tol = 1e-9 * max(1.0, abs(ratio))
            if abs(ratio - n) > tol:
                raise ArgError(
                    f"delay {d}s is not an integer multiple of TR "
                    f"{self.tr_seconds}s (ratio {ratio})"
                )
            counts.append(int(n))
        return counts


def tr_times(n_trs: int, tr_seconds: float, offset: float | None = None) -> np.ndarray:
    """Acquisition times for a scan: mid-TR by default."""
    if offset is None:
        offset = tr_seconds / 2.0
    return np.arange(n_trs) * tr_seconds + offset


def lanczos_weights(sample_times: np.ndarray, tr_grid: np.ndarray,
                    cfg: LanczosConfig) -> np.ndarray:
    """Row-stochastic weight matrix |tr_grid| x |sample_times|.

    Rows with no in-window samples (a grid point more than the window
    half-width beyond the sampled range) are left at zero, flagging the
    output row as unsupported.
    """
    tr_grid = np.asarray(tr_grid, dtype=np.float64)
    sample_times = np.asarray(sample_times, dtype=np.float64)
    if tr_grid.size == 0:
        raise ArgError("tr_grid is empty")
    if tr_grid.size > 1 and not np.all(np.diff(tr_grid) > 0):
        raise ArgError("tr_grid must be strictly increasing")
    cutoff = cfg.cutoff_hz
    if cutoff is None:
        if tr_grid.size < 2:
            raise ArgError("cannot derive cutoff from a single-point grid")
        cutoff = 1.0 / (2.0 * float(np.median(np.diff(tr_grid))))
    delta = tr_grid[:, None] - sample_times[None, :]
    x = 2.0 * cutoff * delta
    w = np.sinc(x) * np.sinc(x / cfg.window_a)
    w[np.abs(x) >= cfg.window_a] = 0.0
    sums = w.sum(axis=1)
    good = sums > 1e-12
    w[good] /= sums[good, None]
    w[~good] = 0.0
    return w


def lanczos_resample(features: FeatureMatrix, tr_grid,
                     cfg: LanczosConfig = LanczosConfig()) -> np.ndarray:
    """Resample feature rows onto the acquisition grid.

    Each output row is a Lanczos-weighted combination of input rows,
    with weights renormalized to sum to one so constant signals pass
    through exactly.
    """
    w = lanczos_weights(features.sample_times, np.asarray(tr_grid, dtype=np.float64), cfg)
    return w @ features.data


def make_delayed_design(resampled: np.ndarray, spec: DelaySpec,
                        scan_id: str = "", source_layer: int = 0,
                        modality: str = "language") -> DesignMatrix:
    """Stack integer-TR shifted copies of the resampled features.

    Block d holds the input shifted down by ``delays[d]/tr`` rows with
    zero padding at the top; blocks are ordered by ascending delay index.
    """
    resampled = np.ascontiguousarray(resampled, dtype=np.float64)
    if resampled.ndim != 2:
        raise ArgError("resampled features must be 2-D")
    t, k = resampled.shape
    counts = spec.delay_counts()
    if t <= max(counts):
        raise ArgError(f"need more than {max(counts)} rows, got {t}")
    blocks = np.zeros((t, len(counts) * k))
    for d, n in enumerate(counts):
        if n == 0:
            blocks[:, d * k:(d + 1) * k] = resampled
        else:
            blocks[n:, d * k:(d + 1) * k] = resampled[:-n]
    return DesignMatrix(scan_id=scan_id, data=blocks,
                        delays_seconds=spec.delays_seconds,
                        source_layer=source_layer, modality=modality)


def build_design(features: FeatureMatrix, n_trs: int, tr_seconds: float,
                 delays: DelaySpec | None = None,
                 lanczos: LanczosConfig = LanczosConfig(),
                 trim_trs: int = 0) -> DesignMatrix:
    """Resample features to the scan's TR grid and apply FIR delays.

    ``trim_trs`` drops that many rows from both ends after delaying
    (burn-in handling; the matching responses must be trimmed the same
    way by the caller).
    """
    if delays is None:
        delays = DelaySpec(tr_seconds=tr_seconds)
    grid = tr_times(n_trs, tr_seconds)
    resampled = lanczos_resample(features, grid, lanczos)
    design = make_delayed_design(resampled, delays, scan_id=features.scan_id,
                                 source_layer=features.layer,
                                 modality=features.modality)
    if trim_trs:
        if 2 * trim_trs >= design.data.shape[0]:
            raise ArgError("trim_trs removes every row")
        design = DesignMatrix(scan_id=design.scan_id,
                              data=design.data[trim_trs:-trim_trs],
                              delays_seconds=design.delays_seconds,
                              source_layer=design.source_layer,
                              modality=design.modality)
    return design
