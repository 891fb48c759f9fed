import json
import struct

import numpy as np
import pytest

from oracles import toy_model
from snfgp.archive import MAGIC, load_model, read_header, save_model
from snfgp.errors import CorruptArchiveError, InvariantError, VersionMismatchError
from snfgp.model import conditional_log_likelihood
from snfgp.pca import pca_reconstruct


@pytest.fixture
def saved(rng, tmp_path):
    model = toy_model(K=3, P=7, D=1, N=6, rng=rng)
    path = tmp_path / "m.snfgp"
    save_model(model, path)
    return model, path


def _rewrite_header(path, edit):
    raw = path.read_bytes()
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n])
    edit(header)
    head = json.dumps(header).encode()
    path.write_bytes(raw[:8] + struct.pack("<Q", len(head)) + head + raw[16 + n:])


def test_roundtrip_bit_exact(saved, rng):
    model, path = saved
    back = load_model(path)
    for (name, a), (_, b) in zip(model.flow.named_arrays(), back.flow.named_arrays()):
        assert np.array_equal(a, b), name
    assert np.array_equal(back.train_Z, model.train_Z)
    assert [g.to_log().tolist() for g in back.gps] == [g.to_log().tolist() for g in model.gps]
    Y = pca_reconstruct(rng.standard_normal((4, 3)), model.pca)
    X = rng.uniform(0, 1, (4, 1))
    assert conditional_log_likelihood(Y, X, back) == conditional_log_likelihood(Y, X, model)


def test_save_is_deterministic(saved, tmp_path):
    model, path = saved
    save_model(load_model(path), tmp_path / "again.snfgp")
    assert (tmp_path / "again.snfgp").read_bytes() == path.read_bytes()


def test_header_is_readable(saved):
    header = read_header(saved[1])
    assert header["format"] == "snfgp-v1"
    assert header["dims"] == {"K": 3, "D": 1, "P": 7, "N": 6}
    assert len(header["gps"]) == 3


def test_truncated(saved):
    _, path = saved
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(CorruptArchiveError):
        load_model(path)


def test_not_an_archive(tmp_path):
    p = tmp_path / "x.snfgp"
    p.write_bytes(b"hello world, not a model")
    with pytest.raises(CorruptArchiveError):
        load_model(p)


def test_version_mismatch(saved):
    _, path = saved
    _rewrite_header(path, lambda h: h.update(format="snfgp-v0"))
    with pytest.raises(VersionMismatchError):
        load_model(path)
    raw = path.read_bytes()
    path.write_bytes(MAGIC[:6] + b"2\n" + raw[8:])
    with pytest.raises(VersionMismatchError):
        load_model(path)


def test_k_mismatch_names_field(saved):
    _, path = saved
    _rewrite_header(path, lambda h: h["dims"].update(K=4))
    with pytest.raises(InvariantError) as info:
        load_model(path)
    assert info.value.field == "pca.basis"


def test_stale_train_latents(saved):
    model, path = saved
    model.train_Z[0, 0] += 0.5
    save_model(model, path)
    with pytest.raises(InvariantError) as info:
        load_model(path)
    assert info.value.field == "train_Z"
