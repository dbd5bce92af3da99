import numpy as np
import pytest

import simseg


def test_sim_zero_weights_is_identity():
    rng = np.random.default_rng(0)
    x = rng.uniform(-5, 5, size=(2, 3, 9, 7))
    block = simseg.SIM(3, alpha=0.0, beta=0.0, gamma=0.0, seed=1)
    assert np.array_equal(block(x), x)


def test_sim_branches_fuse():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, size=(1, 4, 6, 6))
    block = simseg.SIM(4, seed=2)
    a_ch, x_ca = block.channel_attention(x)
    a_sp, x_sa = block.spatial_attention(x)
    rel = block.slice_relation(x)
    assert a_ch.shape == (1, 4, 1, 1)
    assert a_sp.shape == (1, 1, 6, 6)
    np.testing.assert_allclose(block(x), x + 0.3 * x_ca + 0.3 * x_sa + 0.4 * rel,
                               rtol=0, atol=1e-12)


def test_metrics_self_and_disjoint():
    g = np.zeros((16, 16), dtype=np.uint8)
    g[4:10, 3:12] = 1
    m = simseg.evaluate_pair(g, g)
    assert m == {"iou": 1.0, "dice": 1.0, "acc": 1.0, "hd95": 0.0}
    p = np.zeros_like(g)
    p[12:, :2] = 1
    m = simseg.evaluate_pair(p, g, spacing=(2.0, 1.0))
    assert m["iou"] == 0.0 and m["hd95"] > 0.0
    assert simseg.evaluate_pair(np.zeros_like(g), g)["hd95"] is None


def test_losses():
    y = np.zeros((1, 1, 4, 4))
    y[0, 0, :2] = 1
    assert simseg.dice_loss(y, y) < 1e-6
    assert simseg.composite_loss(y, y) == pytest.approx(
        simseg.dice_loss(y, y) + simseg.bce_loss(y, y))


def test_qc_and_split():
    assert simseg.qc_filter(3.0, 3.0) == (True, "")
    assert simseg.qc_filter(2.9, 3.5) == (False, "volume")
    ids = [f"P{i:03d}" for i in range(60)]
    train, val, test = simseg.patient_split(ids, seed=42)
    assert (len(train), len(val), len(test)) == (42, 9, 9)
    assert simseg.patient_split(ids, seed=42) == (train, val, test)


def test_augment_is_seeded_and_keeps_masks_binary():
    rng = np.random.default_rng(3)
    x = rng.integers(0, 256, size=(1, 6, 20, 20)).astype(float)
    y = np.zeros((1, 1, 20, 20))
    y[0, 0, 5:12, 6:15] = 1
    a = simseg.augment(x, y, seed=5, per_op_prob=1.0)
    b = simseg.augment(x, y, seed=5, per_op_prob=1.0)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert set(np.unique(a[1])) <= {0.0, 1.0}


def test_phantom_nesting():
    p = simseg.generate_phantom(4)
    assert p["ct"].shape == p["igtv"].shape
    assert not np.any(p["gtv"] & ~p["igtv"])
    still = simseg.generate_phantom(4, motion_amplitude_mm=0.0)
    assert np.array_equal(still["gtv"], still["igtv"])


def test_network_inflation_and_checkpoint(tmp_path):
    net2d = simseg.build_network(simseg.network_config("2d"), seed=1)
    cfg = simseg.network_config("2.5d")
    cfg["sim"].update(alpha=0.0, beta=0.0, gamma=0.0)
    net25 = net2d.inflate(__import__("json").dumps(cfg), 2)
    rng = np.random.default_rng(4)
    pet = rng.uniform(0, 1, size=(1, 1, 16, 16))
    ct = rng.uniform(0, 1, size=(1, 1, 16, 16))
    a = net2d(pet, ct)
    b = net25(np.repeat(pet, 3, axis=1), np.repeat(ct, 3, axis=1))
    assert a.shape == (1, 1, 16, 16)
    np.testing.assert_allclose(a, b, atol=1e-5)

    path = str(tmp_path / "net.bin")
    net25.save(path, "finetune")
    back = simseg.Network.load(path)
    assert np.array_equal(back(np.repeat(pet, 3, axis=1), np.repeat(ct, 3, axis=1)), b)
    with pytest.raises(simseg.CheckpointError):
        simseg.Network.load(str(tmp_path / "missing.bin"))


def test_config_errors_map_to_exceptions():
    with pytest.raises(simseg.ConfigError):
        simseg.SIM(3, spatial_kernel=4)
    with pytest.raises(simseg.InputError):
        simseg.SIM(3)(np.zeros((3, 3)))
