import numpy as np
import pytest

from versa_motion.checkpoint import (
    MAGIC,
    Checkpoint,
    add_optimizer_state,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    hash_config,
    load_checkpoint,
    optimizer_state,
    save_checkpoint,
)
from versa_motion.errors import CompatibilityError, ParseError
from versa_motion.optim import AdamState
from versa_motion.utils import sha256_file


@pytest.fixture
def ckpt(rng):
    tensors = {"encoder.weight": rng.standard_normal((3, 4)).astype(np.float32),
               "scalar": np.array(2.5, dtype=np.float32)}
    return Checkpoint("tokenizer", {"seed": 1, "tokenizer": {"codebook_size": 8}}, tensors, {"step": 10})


def test_save_and_load(tmp_path, ckpt):
    path = str(tmp_path / "tok.ckpt")
    digest = save_checkpoint(path, ckpt)
    assert digest == sha256_file(path)
    loaded = load_checkpoint(path, expected_kind="tokenizer")
    assert loaded.config == ckpt.config
    assert loaded.meta == {"step": 10}
    assert loaded.config_hash == ckpt.config_hash
    for name, value in ckpt.tensors.items():
        np.testing.assert_array_equal(loaded.tensors[name], value)


def test_bytes_are_deterministic(ckpt):
    assert checkpoint_to_bytes(ckpt) == checkpoint_to_bytes(ckpt)
    assert checkpoint_to_bytes(ckpt).startswith(MAGIC)


def test_hash_ignores_key_order():
    assert hash_config({"a": 1, "b": {"c": 2}}) == hash_config({"b": {"c": 2}, "a": 1})
    assert hash_config({"a": 1}) != hash_config({"a": 2})


def test_kind_mismatch(tmp_path, ckpt):
    path = str(tmp_path / "tok.ckpt")
    save_checkpoint(path, ckpt)
    with pytest.raises(CompatibilityError):
        load_checkpoint(path, expected_kind="generator")


def test_tampered_config_is_detected(ckpt):
    data = checkpoint_to_bytes(ckpt).replace(b'"codebook_size": 8', b'"codebook_size": 9')
    with pytest.raises(CompatibilityError):
        checkpoint_from_bytes(data)


def test_malformed_checkpoints(ckpt):
    with pytest.raises(ParseError):
        checkpoint_from_bytes(b"not a checkpoint")
    with pytest.raises(ParseError):
        checkpoint_from_bytes(MAGIC + b"\x01")
    with pytest.raises(ParseError):
        checkpoint_from_bytes(checkpoint_to_bytes(ckpt)[:-8])


def test_optimizer_state_round_trip(ckpt):
    state = AdamState(lr=1e-3, step=4)
    state.m["w"], state.v["w"] = np.full(3, 0.5), np.full(3, 0.25)
    add_optimizer_state(ckpt.tensors, ckpt.meta, state)
    restored = optimizer_state(checkpoint_from_bytes(checkpoint_to_bytes(ckpt)))
    assert restored.step == 4 and restored.lr == 1e-3
    np.testing.assert_allclose(restored.m["w"], 0.5)
    np.testing.assert_allclose(restored.v["w"], 0.25)
    assert optimizer_state(Checkpoint("x", {})) is None
