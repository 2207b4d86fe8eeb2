"""Core array types and the XEF1 on-disk store.

An XEF1 store is a directory holding ``data.bin`` (14-byte header +
row-major little-endian payload) and ``manifest.json``. f64 is the
canonical compute precision; f32 payloads are accepted on ingest and
widened, but the storage dtype is remembered so a read/write cycle is
byte-identical.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgError, CorruptError, DataError, FormatError, IoError

MAGIC = b"XEF1"
HEADER_SIZE = 14
DTYPE_CODES = {"f32": 1, "f64": 2}
CODE_DTYPES = {1: "f32", 2: "f64"}
NP_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

MODALITIES = ("language", "vision")
SCORE_KINDS = ("correlation", "ratio", "p_value", "q_value", "pc_projection",
               "difference")
ALIGN_DIRECTIONS = ("image_to_caption", "caption_to_image")

# Stimulus-centric names for the two modalities, used in score provenance
# tags ("story→movie" etc).
STIMULUS_NAME = {"language": "story", "vision": "movie"}


def _as_matrix(data, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ArgError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf")


@dataclass(eq=False)
class FeatureMatrix:
    """Time-stamped stimulus features for one scan/layer/modality."""

    scan_id: str
    modality: str
    layer: int
    sample_times: np.ndarray
    data: np.ndarray
    storage_dtype: str = "f64"

    def __post_init__(self):
        self.data = _as_matrix(self.data, "FeatureMatrix.data")
        self.sample_times = np.ascontiguousarray(self.sample_times, dtype=np.float64)
        if self.modality not in MODALITIES:
            raise ArgError(f"unknown modality {self.modality!r}")
        if self.layer < 0 or int(self.layer) != self.layer:
            raise ArgError(f"layer must be a nonnegative integer, got {self.layer}")
        self.layer = int(self.layer)
        if self.storage_dtype not in DTYPE_CODES:
            raise FormatError(f"unknown dtype {self.storage_dtype!r}")
        if self.sample_times.ndim != 1 or len(self.sample_times) != self.data.shape[0]:
            raise ArgError("sample_times length must match number of rows")
        if self.data.shape[1] < 1:
            raise ArgError("feature dimension k must be > 0")
        if len(self.sample_times) > 1 and not np.all(np.diff(self.sample_times) > 0):
            raise DataError("sample_times must be strictly increasing")
        _check_finite(self.sample_times, "sample_times")
        _check_finite(self.data, "FeatureMatrix.data")

    @property
    def k(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]


@dataclass(eq=False)
class ResponseMatrix:
    """TR-aligned responses for one scan: rows are TRs, columns voxels."""

    scan_id: str
    tr_seconds: float
    data: np.ndarray
    storage_dtype: str = "f64"

    def __post_init__(self):
        self.data = _as_matrix(self.data, "ResponseMatrix.data")
        if not self.tr_seconds > 0:
            raise ArgError(f"tr_seconds must be > 0, got {self.tr_seconds}")
        if self.storage_dtype not in DTYPE_CODES:
            raise FormatError(f"unknown dtype {self.storage_dtype!r}")
        # 10-TR block resampling needs at least two full blocks.
        if self.data.shape[0] < 20:
            raise DataError(f"need at least 20 TRs, got {self.data.shape[0]}")
        _check_finite(self.data, "ResponseMatrix.data")

    @property
    def n_trs(self) -> int:
        return self.data.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.data.shape[1]


@dataclass(eq=False)
class DesignMatrix:
    """FIR-delayed stimulus matrix for one scan (T x D*k)."""

    scan_id: str
    data: np.ndarray
    delays_seconds: tuple
    source_layer: int
    modality: str

    def __post_init__(self):
        self.data = _as_matrix(self.data, "DesignMatrix.data")
        self.delays_seconds = tuple(float(d) for d in self.delays_seconds)
        if self.modality not in MODALITIES:
            raise ArgError(f"unknown modality {self.modality!r}")
        d = len(self.delays_seconds)
        if d < 1 or self.data.shape[1] % d != 0:
            raise ArgError(
                f"column count {self.data.shape[1]} is not a multiple of "
                f"{d} delay blocks"
            )
        _check_finite(self.data, "DesignMatrix.data")

    @property
    def n_delays(self) -> int:
        return len(self.delays_seconds)

    @property
    def k(self) -> int:
        return self.data.shape[1] // self.n_delays


@dataclass(eq=False)
class WeightSet:
    """Fitted encoding model: per-voxel weights plus fit statistics.

    ``beta`` lives in the standardized space used for fitting; use
    :func:`xenc.ridge.raw_space_weights` to map back to raw feature units.
    """

    beta: np.ndarray
    lambda_per_voxel: np.ndarray
    feature_means: np.ndarray
    feature_scales: np.ndarray
    response_means: np.ndarray
    response_scales: np.ndarray
    modality: str
    layer: int
    delays_seconds: tuple = (0.0,)

    def __post_init__(self):
        self.beta = _as_matrix(self.beta, "WeightSet.beta")
        for name in ("lambda_per_voxel", "feature_means", "feature_scales",
                     "response_means", "response_scales"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        self.delays_seconds = tuple(float(d) for d in self.delays_seconds)
        if self.modality not in MODALITIES:
            raise ArgError(f"unknown modality {self.modality!r}")
        p, m = self.beta.shape
        if self.lambda_per_voxel.shape != (m,):
            raise ArgError("lambda_per_voxel length must equal voxel count")
        if self.feature_means.shape != (p,) or self.feature_scales.shape != (p,):
            raise ArgError("feature statistics must have one entry per design column")
        if self.response_means.shape != (m,) or self.response_scales.shape != (m,):
            raise ArgError("response statistics must have one entry per voxel")
        if p % len(self.delays_seconds) != 0:
            raise ArgError("beta rows must be a multiple of the delay count")
        for arr, name in ((self.beta, "beta"), (self.lambda_per_voxel, "lambda_per_voxel"),
                          (self.feature_means, "feature_means"),
                          (self.feature_scales, "feature_scales"),
                          (self.response_means, "response_means"),
                          (self.response_scales, "response_scales")):
            _check_finite(arr, f"WeightSet.{name}")
        if np.any(self.lambda_per_voxel <= 0):
            raise DataError("lambda_per_voxel must be strictly positive")
        if np.any(self.feature_scales <= 0) or np.any(self.response_scales <= 0):
            raise DataError("scales must be strictly positive")

    @property
    def n_delays(self) -> int:
        return len(self.delays_seconds)

    @property
    def k(self) -> int:
        return self.beta.shape[0] // self.n_delays

    @property
    def n_voxels(self) -> int:
        return self.beta.shape[1]


@dataclass(eq=False)
class ScoreMap:
    """Per-voxel scalar scores with provenance metadata."""

    values: np.ndarray
    kind: str
    source: str = ""

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ArgError("ScoreMap values must be 1-D")
        if self.kind not in SCORE_KINDS:
            raise ArgError(f"unknown score kind {self.kind!r}")
        finite = self.values[np.isfinite(self.values)]
        if np.any(np.isinf(self.values)):
            raise DataError("ScoreMap values may be NaN but not Inf")
        if self.kind in ("p_value", "q_value"):
            if finite.size and (finite.min() < 0 or finite.max() > 1):
                raise DataError(f"{self.kind} entries must lie in [0, 1]")
        if self.kind == "correlation":
            # tiny fp overshoot from vectorized Pearson is tolerated
            if finite.size and (finite.min() < -1 - 1e-12 or finite.max() > 1 + 1e-12):
                raise DataError("correlations must lie in [-1, 1]")

    @property
    def n_voxels(self) -> int:
        return self.values.shape[0]

    @property
    def nan_mask(self) -> np.ndarray:
        return np.isnan(self.values)


@dataclass(eq=False)
class AlignmentMap:
    """Affine map from one feature space to the other, per layer."""

    matrix: np.ndarray
    intercept: np.ndarray
    direction: str
    layer: int
    fit_lambda: float

    def __post_init__(self):
        self.matrix = _as_matrix(self.matrix, "AlignmentMap.matrix")
        self.intercept = np.ascontiguousarray(self.intercept, dtype=np.float64)
        if self.direction not in ALIGN_DIRECTIONS:
            raise ArgError(f"unknown direction {self.direction!r}")
        if self.intercept.shape != (self.matrix.shape[0],):
            raise ArgError("intercept length must equal the target dimension")
        if not self.fit_lambda > 0:
            raise ArgError("fit_lambda must be positive")
        _check_finite(self.matrix, "AlignmentMap.matrix")
        _check_finite(self.intercept, "AlignmentMap.intercept")

    @property
    def k_target(self) -> int:
        return self.matrix.shape[0]

    @property
    def k_source(self) -> int:
        return self.matrix.shape[1]

    @property
    def source_modality(self) -> str:
        return "vision" if self.direction == "image_to_caption" else "language"

    @property
    def target_modality(self) -> str:
        return "language" if self.direction == "image_to_caption" else "vision"


# ---------------------------------------------------------------------------
# low-level XEF1 payload IO (reused by weight/score persistence)
# ---------------------------------------------------------------------------

def encode_payload(arr: np.ndarray, dtype: str = "f64") -> bytes:
    """Serialize a 2-D array to XEF1 bytes (header + row-major LE data)."""
    if dtype not in DTYPE_CODES:
        raise FormatError(f"unknown dtype {dtype!r}")
    arr = _as_matrix(arr, "payload")
    n_rows, n_cols = arr.shape
    header = MAGIC + struct.pack("<BBII", DTYPE_CODES[dtype], 0, n_rows, n_cols)
    return header + np.ascontiguousarray(arr, dtype=NP_DTYPES[dtype]).tobytes()


def decode_payload(raw: bytes) -> tuple[np.ndarray, str]:
    """Parse XEF1 bytes into (f64 matrix, storage dtype)."""
    if len(raw) < HEADER_SIZE:
        raise FormatError("payload shorter than the 14-byte header")
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    code, reserved, n_rows, n_cols = struct.unpack("<BBII", raw[4:HEADER_SIZE])
    if code not in CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if reserved != 0:
        raise FormatError(f"reserved byte must be 0, got {reserved}")
    dtype = CODE_DTYPES[code]
    expected = HEADER_SIZE + n_rows * n_cols * NP_DTYPES[dtype].itemsize
    if len(raw) != expected:
        raise CorruptError(
            f"payload size {len(raw)} does not match header dims "
            f"{n_rows}x{n_cols} ({expected} bytes expected)"
        )
    flat = np.frombuffer(raw, dtype=NP_DTYPES[dtype], offset=HEADER_SIZE)
    data = flat.reshape(n_rows, n_cols).astype(np.float64)
    return data, dtype


def write_payload(path, arr: np.ndarray, dtype: str = "f64") -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(encode_payload(arr, dtype))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_payload(path) -> tuple[np.ndarray, str]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return decode_payload(raw)


def fmt_float(x) -> str:
    """Shortest round-trip decimal form, for CSV cells."""
    return repr(float(x))


def dump_json(path, obj) -> None:
    """Canonical JSON writer: sorted keys, fixed layout, trailing newline."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# feature/response stores
# ---------------------------------------------------------------------------

_MANIFEST_KEYS = {"role", "scan_id", "modality", "layer", "tr_seconds",
                  "sample_times", "n_rows", "n_cols", "dtype"}


def write_store(array, path) -> None:
    """Write a FeatureMatrix or ResponseMatrix as an XEF1 store directory."""
    if isinstance(array, FeatureMatrix):
        manifest = {
            "role": "features",
            "scan_id": array.scan_id,
            "modality": array.modality,
            "layer": array.layer,
            "tr_seconds": None,
            "sample_times": [float(t) for t in array.sample_times],
            "n_rows": array.data.shape[0],
            "n_cols": array.data.shape[1],
            "dtype": array.storage_dtype,
        }
    elif isinstance(array, ResponseMatrix):
        manifest = {
            "role": "responses",
            "scan_id": array.scan_id,
            "modality": None,
            "layer": None,
            "tr_seconds": float(array.tr_seconds),
            "sample_times": None,
            "n_rows": array.data.shape[0],
            "n_cols": array.data.shape[1],
            "dtype": array.storage_dtype,
        }
    else:
        raise ArgError(f"cannot store object of type {type(array).__name__}")
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc}") from exc
    write_payload(os.path.join(path, "data.bin"), array.data, array.storage_dtype)
    dump_json(os.path.join(path, "manifest.json"), manifest)


def read_store(path):
    """Read an XEF1 store, returning a validated FeatureMatrix or ResponseMatrix."""
    manifest = load_json(os.path.join(path, "manifest.json"))
    if not isinstance(manifest, dict) or set(manifest) != _MANIFEST_KEYS:
        missing = _MANIFEST_KEYS - set(manifest or {})
        extra = set(manifest or {}) - _MANIFEST_KEYS
        raise FormatError(
            f"manifest keys wrong in {path} (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})"
        )
    data, dtype = read_payload(os.path.join(path, "data.bin"))
    if dtype != manifest["dtype"]:
        raise CorruptError(f"manifest dtype {manifest['dtype']} != payload dtype {dtype}")
    if data.shape != (manifest["n_rows"], manifest["n_cols"]):
        raise CorruptError(
            f"manifest dims {manifest['n_rows']}x{manifest['n_cols']} "
            f"!= payload dims {data.shape[0]}x{data.shape[1]}"
        )
    role = manifest["role"]
    if role == "features":
        if manifest["sample_times"] is None or manifest["modality"] is None \
                or manifest["layer"] is None:
            raise FormatError("feature manifest needs modality, layer, sample_times")
        return FeatureMatrix(
            scan_id=manifest["scan_id"],
            modality=manifest["modality"],
            layer=manifest["layer"],
            sample_times=np.asarray(manifest["sample_times"], dtype=np.float64),
            data=data,
            storage_dtype=dtype,
        )
    if role == "responses":
        if manifest["tr_seconds"] is None:
            raise FormatError("response manifest needs tr_seconds")
        return ResponseMatrix(
            scan_id=manifest["scan_id"],
            tr_seconds=manifest["tr_seconds"],
            data=data,
            storage_dtype=dtype,
        )
    raise FormatError(f"unknown role {role!r} in {path}")


def check_consistent_voxels(responses) -> int:
    """All response matrices must share one voxel count; returns it."""
    counts = {r.n_voxels for r in responses}
    if len(counts) != 1:
        raise ArgError(f"inconsistent voxel counts across scans: {sorted(counts)}")
    return counts.pop()


def check_consistent_features(features) -> int:
    """All feature matrices of one (modality, layer) must share k; returns it."""
    dims = {(f.modality, f.layer, f.k) for f in features}
    ks = {k for (_, _, k) in dims}
    if len({(m, l) for (m, l, _) in dims}) == 1 and len(ks) > 1:
        raise ArgError(f"feature dim k differs across scans: {sorted(ks)}")
    if len(ks) != 1:
        raise ArgError(f"feature matrices mix (modality, layer) pairs: {sorted(dims)}")
    return ks.pop()
