import numpy as np
import pytest

from gandet.checkpoint import Checkpoint, load_checkpoint, load_detector_checkpoint, save_checkpoint
from gandet.detector import DetectorConfig, init_params
from gandet.errors import CheckpointError


def test_roundtrip_bit_identical(tmp_path):
    cfg = DetectorConfig()
    params = init_params(cfg, 0)
    meta = {"config_hash": "abc123", "seed": 7, "epoch": 3, "parent": None}
    p = tmp_path / "model.ckpt"
    save_checkpoint(Checkpoint(params, meta), p)
    back = load_checkpoint(p)
    assert back.meta == meta
    assert set(back.params) == set(params)
    for name in params:
        assert back.params[name].dtype == np.float32
        assert np.array_equal(back.params[name], params[name].astype(np.float32))


def test_save_is_deterministic(tmp_path):
    cfg = DetectorConfig()
    params = init_params(cfg, 1)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(Checkpoint(params, {"k": 1}), a)
    save_checkpoint(Checkpoint(params, {"k": 1}), b)
    assert a.read_bytes() == b.read_bytes()


def test_load_validates_architecture(tmp_path):
    cfg = DetectorConfig()
    params = init_params(cfg, 0)
    p = tmp_path / "model.ckpt"
    save_checkpoint(Checkpoint(params, {}), p)
    load_detector_checkpoint(p, cfg)  # fits

    other = DetectorConfig(channels=(8, 16, 24, 32))
    with pytest.raises(CheckpointError, match="shape"):
        load_detector_checkpoint(p, other)

    del params["block1.bias"]
    save_checkpoint(Checkpoint(params, {}), p)
    with pytest.raises(CheckpointError, match="missing"):
        load_detector_checkpoint(p, cfg)


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_param_bytes_digest_changes_with_values(tmp_path):
    cfg = DetectorConfig()
    params = init_params(cfg, 0)
    c1 = Checkpoint({k: v.copy() for k, v in params.items()})
    params["block1.weight"][0, 0, 0, 0] += 1.0
    c2 = Checkpoint(params)
    assert c1.param_bytes() != c2.param_bytes()
