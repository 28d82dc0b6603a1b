import numpy as np
import pytest

from search_agent_lab.checkpoint import (
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from search_agent_lab.errors import ArchitectureMismatch, CheckpointError
from search_agent_lab.policy import PolicyArch, PolicyParams


@pytest.fixture
def params():
    return PolicyParams.initialize(PolicyArch(3, 4, 20), seed=7, scale=1.0)


def test_save_and_load(tmp_path, params):
    path = tmp_path / "iter_001" / "rl.ckpt"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path, params.arch)
    assert loaded.arch == params.arch
    assert loaded.values.tobytes() == params.values.tobytes()
    assert list(path.parent.iterdir()) == [path]


def test_encoding_is_stable(params):
    data = encode_checkpoint(params)
    assert data.startswith(MAGIC)
    assert encode_checkpoint(decode_checkpoint(data)) == data


def test_bad_magic(params):
    data = bytearray(encode_checkpoint(params))
    data[:4] = b"JUNK"
    with pytest.raises(CheckpointError, match="bad magic"):
        decode_checkpoint(bytes(data))


def test_truncated_file(tmp_path, params):
    data = encode_checkpoint(params)
    with pytest.raises(CheckpointError, match="truncated header"):
        decode_checkpoint(data[:10])
    path = tmp_path / "short.ckpt"
    path.write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="wrong length"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_architecture_mismatch(tmp_path, params):
    path = tmp_path / "base.ckpt"
    save_checkpoint(params, path)
    with pytest.raises(ArchitectureMismatch):
        load_checkpoint(path, PolicyArch(4, 4, 20))


def test_overwrite_replaces_whole_file(tmp_path, params):
    path = tmp_path / "sft.ckpt"
    save_checkpoint(params, path)
    save_checkpoint(PolicyParams.zeros(params.arch), path)
    assert not np.any(load_checkpoint(path).values)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["sft.ckpt"]
