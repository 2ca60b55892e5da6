import struct

import numpy as np
import pytest

from mtocc import data, persist
from mtocc.errors import CorruptionError, MigrationError, PersistenceError
from mtocc.experiment import ExperimentConfig, train_model
from mtocc.linear import LinearHyperparams
from mtocc.nonlinear import NonlinearHyperparams
from mtocc.sparse import SparseHyperparams


@pytest.fixture(scope="module")
def bundle():
    return data.synth_tasks(3, 6, 3, 0.7, seed=4, n_test_pos=8, n_test_neg=12)


def short_config(variant):
    return ExperimentConfig(
        variant=variant,
        linear=LinearHyperparams(max_outer_iters=10),
        nonlinear=NonlinearHyperparams(max_outer_iters=10),
        sparse=SparseHyperparams(max_outer_iters=3, prox_max_iters=200),
    )


@pytest.mark.parametrize("variant", ["OCKSR", "C-OCKSR", "OCKSR-L", "OCKSR-N", "OCKSR-NS"])
def test_round_trip_predictions_bit_identical(tmp_path, bundle, variant):
    model = train_model(short_config(variant), bundle)
    path = tmp_path / "m.mtoc"
    persist.persist_model(model, path)
    back = persist.load_model(path)
    assert back.variant == variant
    assert back.fingerprint == model.fingerprint
    assert back.trace.to_dict() == model.trace.to_dict()
    X = bundle.X[~bundle.is_train]
    assert np.array_equal(back.responses(X), model.responses(X))
    for t in range(3):
        assert np.array_equal(back.scores(X, t), model.scores(X, t))


def test_header_layout(bundle):
    buf = persist.dumps(train_model(short_config("C-OCKSR"), bundle))
    assert buf[:4] == b"MTOC"
    assert struct.unpack("<H", buf[4:6])[0] == persist.VERSION


def test_truncated_file(tmp_path, bundle):
    buf = persist.dumps(train_model(short_config("OCKSR-L"), bundle))
    for cut in (5, 40, len(buf) - 1):
        with pytest.raises(CorruptionError):
            persist.loads(buf[:cut])


def test_flipped_byte(bundle):
    buf = bytearray(persist.dumps(train_model(short_config("C-OCKSR"), bundle)))
    buf[60] ^= 0xFF
    with pytest.raises(CorruptionError, match="checksum"):
        persist.loads(bytes(buf))


def test_version_bump(bundle):
    buf = bytearray(persist.dumps(train_model(short_config("C-OCKSR"), bundle)))
    buf[4:6] = struct.pack("<H", persist.VERSION + 1)
    with pytest.raises(MigrationError) as err:
        persist.loads(bytes(buf))
    msg = str(err.value)
    assert str(persist.VERSION + 1) in msg and str(persist.VERSION) in msg


def test_bad_magic():
    with pytest.raises(CorruptionError):
        persist.loads(b"NOPE" + b"\0" * 64)


def test_missing_file(tmp_path):
    with pytest.raises(PersistenceError):
        persist.load_model(tmp_path / "absent.mtoc")
