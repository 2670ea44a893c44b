import numpy as np
import pytest

from gandet.degrade import DistortionPool
from gandet.detector import DetectorConfig, init_params
from gandet.errors import ConfigError, NumericError
from gandet.rng import substream
from gandet.synth import SceneSpec, generate_dataset, materialize_split
from gandet.train import (
    TrainConfig,
    TrainValData,
    freeze_after,
    pooled_od_loss,
    train_baseline,
    train_finetune,
    train_gando,
)

CFG32 = DetectorConfig(image_size=32, channels=(4, 6, 8, 10))
SPEC32 = SceneSpec(image_size=32, num_objects=2, min_object_side=8, max_object_side=16)


@pytest.fixture(scope="module")
def small_data():
    m = generate_dataset(SPEC32, {"train": 12, "val": 4}, seed=7)
    return TrainValData.from_manifest(m)


@pytest.fixture(scope="module")
def small_baseline(small_data):
    tcfg = TrainConfig(seed=1, batch_size=4, max_epochs=2, lr=1e-3)
    params, log = train_baseline(CFG32, tcfg, small_data, init_seed=3)
    return params


def _tcfg(**kw):
    base = dict(seed=5, batch_size=4, max_epochs=2, lr=1e-3, lr_d=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def test_baseline_log_has_no_adversarial_scalars(small_data):
    tcfg = _tcfg(max_epochs=1)
    _, log = train_baseline(CFG32, tcfg, small_data, init_seed=3)
    assert log.mode == "baseline"
    assert len(log.iterations) == 3
    for rec in log.iterations:
        assert "l_gan" not in rec and "d_loss" not in rec
        assert {"l_od", "l_class", "l_bb"} <= set(rec)
    assert len(log.epochs) == 1


def test_finetune_log_has_no_gan_entries(small_data, small_baseline):
    _, log = train_finetune(CFG32, _tcfg(), small_baseline, small_data,
                            DistortionPool.identity())
    assert all("l_gan" not in rec for rec in log.iterations)


def test_baseline_immutable_through_gando(small_data, small_baseline):
    snapshot = {k: v.copy() for k, v in small_baseline.items()}
    train_gando(CFG32, _tcfg(), small_baseline, small_data, DistortionPool.identity())
    for name in snapshot:
        assert np.array_equal(small_baseline[name], snapshot[name])


def test_gando_d_update_cadence(small_data, small_baseline):
    _, log = train_gando(CFG32, _tcfg(max_epochs=2), small_baseline, small_data,
                         DistortionPool.identity())
    with_d = [rec["iteration"] for rec in log.iterations if "d_loss" in rec]
    assert with_d == [1, 3, 5]
    _, log1 = train_gando(CFG32, _tcfg(max_epochs=1, d_period=1), small_baseline,
                          small_data, DistortionPool.identity())
    assert all("d_loss" in rec for rec in log1.iterations)


def test_gando_iteration0_matches_baseline_loss_under_identity_pool(small_data, small_baseline):
    """With no-op distortion and G initialized from B, the first logged
    detection loss equals the baseline's own loss on that batch."""
    tcfg = _tcfg(seed=11, max_epochs=1, lr=0.0, lr_d=0.0)
    _, log = train_gando(CFG32, tcfg, small_baseline, small_data, DistortionPool.identity())
    first = log.iterations[0]

    from gandet.anchors import encode_targets
    from gandet.detector import batch_od_loss_and_output_grads, forward_batch

    anchors = CFG32.anchors()
    order = substream(tcfg.seed, "shuffle", 0).permutation(len(small_data.train_images))
    idx = order[:4]
    batch = small_data.train_images[idx]
    targets = [encode_targets(small_data.train_labels[i], anchors, CFG32.num_classes)
               for i in idx]
    out, _ = forward_batch(small_baseline, CFG32, batch)
    scalars, _, _ = batch_od_loss_and_output_grads(out, targets, CFG32.alpha,
                                                   CFG32.neg_pos_ratio)
    assert first["l_od"] == pytest.approx(scalars["l_od"], abs=1e-6)


def test_zero_lr_finetune_is_noop(small_data, small_baseline):
    params, _ = train_finetune(CFG32, _tcfg(lr=0.0, max_epochs=2), small_baseline,
                               small_data, DistortionPool.identity())
    for name in params:
        assert np.array_equal(params[name], small_baseline[name])


def test_gradient_flow_separation(small_data, small_baseline):
    # G frozen (lr 0): only D moves; D frozen (lr_d 0): only G moves
    params, log = train_gando(CFG32, _tcfg(lr=0.0, max_epochs=1), small_baseline,
                              small_data, DistortionPool.identity())
    for name in params:
        assert np.array_equal(params[name], small_baseline[name])
    assert any("d_loss" in rec for rec in log.iterations)

    params2, _ = train_gando(CFG32, _tcfg(lr_d=0.0, max_epochs=1), small_baseline,
                             small_data, DistortionPool.identity())
    changed = any(not np.array_equal(params2[n], small_baseline[n]) for n in params2)
    assert changed


def test_training_determinism_bit_identical(small_data, small_baseline):
    pool = DistortionPool.defocus()
    a, _ = train_gando(CFG32, _tcfg(seed=21), small_baseline, small_data, pool)
    b, _ = train_gando(CFG32, _tcfg(seed=21), small_baseline, small_data, pool)
    for name in a:
        assert np.array_equal(a[name], b[name])
    c, _ = train_finetune(CFG32, _tcfg(seed=22), small_baseline, small_data, pool)
    d, _ = train_finetune(CFG32, _tcfg(seed=22), small_baseline, small_data, pool)
    for name in c:
        assert np.array_equal(c[name], d[name])


def test_freeze_after_mask_and_training(small_data, small_baseline):
    params = init_params(CFG32, 0)
    mask_none = freeze_after(params, None)
    assert all(mask_none.values())
    mask1 = freeze_after(params, "block1")
    trainable = {n for n, v in mask1.items() if v}
    assert trainable == {"block1.weight", "block1.bias"}
    with pytest.raises(ConfigError):
        freeze_after(params, "block9")

    out, _ = train_gando(CFG32, _tcfg(freeze_after_layer="block2", max_epochs=3),
                         small_baseline, small_data, DistortionPool.identity())
    for name in out:
        frozen = not freeze_after(out, "block2")[name]
        same = np.array_equal(out[name], small_baseline[name])
        if frozen:
            assert same, f"{name} should be bit-identical"
    moved = [n for n in out
             if freeze_after(out, "block2")[n] and not np.array_equal(out[n], small_baseline[n])]
    assert moved


def test_nonfinite_loss_aborts_with_seed(small_data):
    params = init_params(CFG32, 0)
    params["block1.weight"] = params["block1.weight"].astype(np.float32)
    params["block1.weight"][0, 0, 0, 0] = np.inf
    tcfg = _tcfg(seed=33, max_epochs=1)
    with pytest.raises(NumericError, match="33"):
        train_finetune(CFG32, tcfg, params, small_data, DistortionPool.identity())


def test_odd_batch_size_rejected(small_data, small_baseline):
    with pytest.raises(ConfigError):
        train_finetune(CFG32, _tcfg(batch_size=3), small_baseline, small_data,
                       DistortionPool.identity())


def test_pooled_loss_partition_independent(small_data, small_baseline):
    from gandet.anchors import encode_targets

    anchors = CFG32.anchors()
    targets = [encode_targets(l, anchors, CFG32.num_classes) for l in small_data.val_labels]
    a = pooled_od_loss(small_baseline, CFG32, small_data.val_images, targets, chunk=1)
    b = pooled_od_loss(small_baseline, CFG32, small_data.val_images, targets, chunk=4)
    assert a == pytest.approx(b, rel=1e-12)


def test_plateau_termination_caps_epochs(small_data, small_baseline):
    # lr 0: validation loss is flat, so tau=1 decays at epochs 1, 2 and stops at 3
    tcfg = _tcfg(lr=0.0, lr_d=0.0, max_epochs=50)
    tcfg.patience_finetune = 1
    params, log = train_finetune(CFG32, tcfg, small_baseline, small_data,
                                 DistortionPool.identity())
    assert len(log.epochs) == 4  # epochs 0..3
    assert [e["epoch"] for e in log.lr_events] == [1, 2]


def test_two_phase_schedule_runs_fixed_epochs(small_data, small_baseline):
    tcfg = _tcfg(schedule="two-phase", two_phase_epochs=(2, 1), max_epochs=50)
    _, log = train_finetune(CFG32, tcfg, small_baseline, small_data,
                            DistortionPool.identity())
    assert len(log.epochs) == 3


def test_manifest_materialization(small_data):
    assert small_data.train_images.shape == (12, 32, 32, 3)
    assert len(small_data.val_labels) == 4
