import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xenc.data_model import (FeatureMatrix, ResponseMatrix, ScoreMap,
                             decode_payload, encode_payload, read_store,
                             write_store)
from xenc.errors import ArgError, CorruptError, DataError, FormatError

from conftest import make_features, make_responses


def test_round_trip_identity_small(tmp_path):
    feat = FeatureMatrix(scan_id="a", modality="language", layer=0,
                         sample_times=[0.0, 1.0, 2.0],
                         data=[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    write_store(feat, tmp_path / "s")
    back = read_store(tmp_path / "s")
    assert isinstance(back, FeatureMatrix)
    assert np.array_equal(back.data, feat.data)
    assert np.array_equal(back.sample_times, feat.sample_times)


def test_manifest_payload_dim_mismatch(tmp_path):
    feat = make_features(t=3, k=2)
    write_store(feat, tmp_path / "s")
    manifest_path = tmp_path / "s" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["n_rows"] = 4
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(CorruptError):
        read_store(tmp_path / "s")


def test_header_arithmetic_1x1_zero():
    raw = encode_payload(np.zeros((1, 1)), "f64")
    assert len(raw) == 14 + 8
    assert raw[:4] == b"XEF1"
    assert raw[14:] == b"\x00" * 8


def test_manifest_fields_verbatim(tmp_path):
    feat = make_features(modality="language", layer=8)
    write_store(feat, tmp_path / "s")
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert manifest["modality"] == "language"
    assert manifest["layer"] == 8
    assert manifest["role"] == "features"


@settings(max_examples=40, deadline=None)
@given(rows=st.integers(1, 20), cols=st.integers(1, 12),
       dtype=st.sampled_from(["f32", "f64"]), seed=st.integers(0, 2**31))
def test_store_byte_identical_round_trip(tmp_path_factory, rows, cols, dtype, seed):
    # write -> read -> write must be byte-for-byte stable, f32 included
    tmp = tmp_path_factory.mktemp("rt")
    data = np.random.default_rng(seed).standard_normal((rows, cols))
    feat = FeatureMatrix(scan_id="x", modality="vision", layer=1,
                         sample_times=np.arange(rows, dtype=float),
                         data=data, storage_dtype=dtype)
    write_store(feat, tmp / "a")
    back = read_store(tmp / "a")
    write_store(back, tmp / "b")
    for name in ("data.bin", "manifest.json"):
        assert (tmp / "a" / name).read_bytes() == (tmp / "b" / name).read_bytes()


def test_f32_widened_on_read(tmp_path):
    data = np.array([[0.1, 0.2]], dtype=np.float32)
    feat = FeatureMatrix(scan_id="x", modality="vision", layer=0,
                         sample_times=[0.0], data=data.astype(np.float64),
                         storage_dtype="f32")
    write_store(feat, tmp_path / "s")
    back = read_store(tmp_path / "s")
    assert back.data.dtype == np.float64
    assert back.storage_dtype == "f32"
    assert np.array_equal(back.data, data.astype(np.float32).astype(np.float64))


def test_response_round_trip(tmp_path):
    resp = make_responses(t=25, m=4, tr=2.0045)
    write_store(resp, tmp_path / "r")
    back = read_store(tmp_path / "r")
    assert isinstance(back, ResponseMatrix)
    assert back.tr_seconds == resp.tr_seconds
    assert np.array_equal(back.data, resp.data)


@pytest.mark.parametrize("mutate,err", [
    (lambda b: b"YEF1" + b[4:], FormatError),                  # bad magic
    (lambda b: b[:4] + b"\x07" + b[5:], FormatError),          # bad dtype code
    (lambda b: b[:5] + b"\x01" + b[6:], FormatError),          # reserved != 0
    (lambda b: b[:-4], CorruptError),                          # truncated payload
    (lambda b: b + b"\x00" * 8, CorruptError),                 # extra payload
    (lambda b: b[:13], FormatError),                           # short header
])
def test_corrupted_payloads_rejected(mutate, err):
    raw = encode_payload(np.ones((2, 3)), "f64")
    with pytest.raises(err):
        decode_payload(mutate(raw))


def test_nan_payload_rejected(tmp_path):
    feat = make_features(t=21, k=2)
    write_store(feat, tmp_path / "s")
    bad = feat.data.copy()
    bad[0, 0] = np.nan
    with open(tmp_path / "s" / "data.bin", "wb") as fh:
        fh.write(encode_payload(bad, "f64"))
    with pytest.raises(DataError):
        read_store(tmp_path / "s")


def test_unknown_manifest_key_rejected(tmp_path):
    feat = make_features()
    write_store(feat, tmp_path / "s")
    path = tmp_path / "s" / "manifest.json"
    manifest = json.loads(path.read_text())
    manifest["surprise"] = 1
    path.write_text(json.dumps(manifest))
    with pytest.raises(FormatError):
        read_store(tmp_path / "s")


def test_invariant_violations_rejected():
    with pytest.raises(DataError):   # non-increasing times
        FeatureMatrix(scan_id="x", modality="language", layer=0,
                      sample_times=[0.0, 0.0], data=[[1.0], [2.0]])
    with pytest.raises(ArgError):    # times length mismatch
        FeatureMatrix(scan_id="x", modality="language", layer=0,
                      sample_times=[0.0], data=[[1.0], [2.0]])
    with pytest.raises(ArgError):    # bad modality
        FeatureMatrix(scan_id="x", modality="audio", layer=0,
                      sample_times=[0.0], data=[[1.0]])
    with pytest.raises(ArgError):    # negative layer
        make_features(layer=-1)
    with pytest.raises(DataError):   # too few TRs for block resampling
        ResponseMatrix(scan_id="x", tr_seconds=2.0, data=np.zeros((19, 3)))
    with pytest.raises(ArgError):    # bad TR
        ResponseMatrix(scan_id="x", tr_seconds=0.0, data=np.zeros((25, 3)))
    bad = np.zeros((25, 3))          # non-finite data
    bad[1, 1] = np.inf
    with pytest.raises(DataError):
        ResponseMatrix(scan_id="x", tr_seconds=1.0, data=bad)


def test_scoremap_validation():
    with pytest.raises(DataError):
        ScoreMap(values=[0.5, 1.5], kind="p_value")
    with pytest.raises(DataError):
        ScoreMap(values=[2.0], kind="correlation")
    with pytest.raises(ArgError):
        ScoreMap(values=[0.5], kind="banana")
    sm = ScoreMap(values=[0.5, np.nan], kind="correlation")
    assert sm.nan_mask.tolist() == [False, True]
