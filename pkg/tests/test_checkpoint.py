import numpy as np
import pytest

from vrwkv import checkpoint as ck
from vrwkv import model as md
from vrwkv.errors import CheckpointCorruptError, CheckpointFormatError


def small_model(**over):
    base = dict(d_model=16, n_layers=2, n_heads=2, head_dim=8, d_ffn=32, vocab_size=40,
                d_vision=6, patch=2, lora_rank=2, recurrence="dd")
    base.update(over)
    return md.init_model(md.ModelConfig(**base), seed=3, dtype=np.float32)


def test_round_trip_bit_identical(tmp_path):
    model = small_model()
    path = tmp_path / "m.vrwk"
    ck.save_checkpoint(path, model)
    loaded, cfg = ck.load_checkpoint(path)
    assert cfg == model.cfg
    for (n1, a1), (n2, a2) in zip(md.named_parameters(model), md.named_parameters(loaded)):
        assert n1 == n2
        np.testing.assert_array_equal(a1, a2, err_msg=n1)


def test_round_trip_hybrid_and_di(tmp_path):
    for over in (dict(recurrence="di"), dict(tiny_attention=True, tiny_attention_dim=4)):
        model = small_model(**over)
        path = tmp_path / "m.vrwk"
        ck.save_checkpoint(path, model)
        loaded, _ = ck.load_checkpoint(path)
        for (n1, a1), (_, a2) in zip(md.named_parameters(model), md.named_parameters(loaded)):
            np.testing.assert_array_equal(a1, a2, err_msg=n1)


def test_wrong_magic(tmp_path):
    model = small_model()
    path = tmp_path / "m.vrwk"
    ck.save_checkpoint(path, model)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError):
        ck.load_checkpoint(path)


def test_wrong_version(tmp_path):
    model = small_model()
    path = tmp_path / "m.vrwk"
    ck.save_checkpoint(path, model)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError):
        ck.load_checkpoint(path)


def test_truncated_file_distinct_error(tmp_path):
    model = small_model()
    path = tmp_path / "m.vrwk"
    ck.save_checkpoint(path, model)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointCorruptError):
        ck.load_checkpoint(path)


def test_shape_table_mismatch(tmp_path):
    # saved under one config, header rewritten to claim a different d_ffn
    model = small_model()
    path = tmp_path / "m.vrwk"
    ck.save_checkpoint(path, model)
    raw = path.read_bytes()
    cfg_len = int.from_bytes(raw[8:12], "little")
    cfg_json = raw[12:12 + cfg_len].decode()
    swapped = cfg_json.replace('"d_ffn": 32', '"d_ffn": 64')
    assert swapped != cfg_json
    new = raw[:8] + len(swapped).to_bytes(4, "little") + swapped.encode() + raw[12 + cfg_len:]
    path.write_bytes(new)
    with pytest.raises(CheckpointFormatError):
        ck.load_checkpoint(path)


def test_trailing_garbage(tmp_path):
    model = small_model()
    path = tmp_path / "m.vrwk"
    ck.save_checkpoint(path, model)
    path.write_bytes(path.read_bytes() + b"\x00\x01")
    with pytest.raises(CheckpointFormatError):
        ck.load_checkpoint(path)
