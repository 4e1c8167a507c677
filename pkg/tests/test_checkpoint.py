import numpy as np
import pytest

from lift.exceptions import (
    BadMagicError,
    CheckpointError,
    ChecksumError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from lift.harness.checkpoint import (
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
    state_record_nbytes,
)
from lift.masking import Mask
from lift.optimizer import SparseAdamState
from lift.rng import SplitMix64


def sample_checkpoint():
    rng = SplitMix64(0)
    mask = Mask(6, 5, rng.choice(30, 7))
    return Checkpoint(
        matrices={"layer/W": rng.normal((6, 5)), "head": np.array([[np.pi], [-0.0], [1e-310]])},
        masks={"layer/W": mask},
        states={"layer/W": SparseAdamState(mask, rng.normal(7), rng.uniform(7), 42)},
    )


def state_only(m, n, k):
    mask = Mask(m, n, SplitMix64(1).choice(m * n, k))
    return Checkpoint(states={"s": SparseAdamState.zeros(mask)})


def test_round_trip_is_bit_exact(tmp_path):
    ckpt = sample_checkpoint()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)
    assert loaded == ckpt
    assert loaded.matrices["head"][1, 0].tobytes() == np.float64(-0.0).tobytes()
    assert encode_checkpoint(loaded) == path.read_bytes()


def test_header_layout():
    buf = encode_checkpoint(sample_checkpoint())
    assert buf[:8] == b"LIFTCKPT"
    assert int.from_bytes(buf[8:12], "little") == 1
    assert int.from_bytes(buf[12:20], "little") == 4


def test_corrupted_payload_byte_fails_checksum():
    buf = bytearray(encode_checkpoint(sample_checkpoint()))
    buf[60] ^= 0x01
    with pytest.raises(ChecksumError):
        decode_checkpoint(bytes(buf))


def test_distinct_error_categories():
    buf = encode_checkpoint(sample_checkpoint())
    with pytest.raises(BadMagicError):
        decode_checkpoint(b"NOTACKPT" + buf[8:])
    future = bytearray(buf)
    future[8:12] = (2).to_bytes(4, "little")
    with pytest.raises(UnsupportedVersionError):
        decode_checkpoint(bytes(future))
    for cut in (5, 30, len(buf) // 2, len(buf) - 1):
        with pytest.raises(TruncatedCheckpointError):
            decode_checkpoint(buf[:cut])
    for exc in (BadMagicError, UnsupportedVersionError, ChecksumError, TruncatedCheckpointError):
        assert issubclass(exc, CheckpointError)


def test_state_size_formula_independent_of_shape():
    small = encode_checkpoint(state_only(64, 64, 100))
    large = encode_checkpoint(state_only(1024, 1024, 100))
    overhead = 8 + 4 + 8 + 4
    assert len(small) == len(large) == overhead + state_record_nbytes("s", 100)
    assert state_record_nbytes("s", 100) == 1 + 4 + 1 + 16 + 16 + 100 * 8 + 2 * 100 * 8


def test_empty_checkpoint():
    assert decode_checkpoint(encode_checkpoint(Checkpoint())) == Checkpoint()
