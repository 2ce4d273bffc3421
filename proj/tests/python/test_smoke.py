import math

import numpy as np
import pytest

import amcseg


def test_version():
    assert amcseg.__version__


def test_model_build_and_forward():
    m = amcseg.Model(variant="AMC_NET", base_channels=2, input_size=32, dropout=0.0)
    assert m.variant == "AMC_NET"
    assert m.parameter_count > 0
    x = np.random.default_rng(0).random((2, 1, 32, 32), dtype=np.float32)
    y = m.forward(x)
    assert y.shape == (2, 1, 32, 32)
    assert (y > 0).all() and (y < 1).all()
    # deterministic inference
    assert np.array_equal(y, m.forward(x))


def test_parameter_counts_per_variant():
    counts = {
        "UNET": 1962337,
        "ATT_UNET": 1995341,
        "MSU_NET": 3705537,
        "AMC_NET": 3738541,
    }
    for variant, expected in counts.items():
        assert amcseg.Model(variant=variant).parameter_count == expected


def test_focal_loss_oracle():
    pred = np.full((1, 1, 1, 1), 0.5, dtype=np.float32)
    target = np.ones((1, 1, 1, 1), dtype=np.float32)
    fl = amcseg.compute_loss("FL", pred, target, alpha=0.8, gamma=2.0)
    assert fl == pytest.approx(0.8 * 0.25 * math.log(2.0), abs=1e-6)
    tl = amcseg.compute_loss("TL", pred, target, alpha=0.7, beta=0.3)
    assert tl == pytest.approx(0.189189, abs=1e-5)


def test_phantom_patches_and_metrics():
    hu, lesions, lungs = amcseg.make_phantom(7, 2, area_fraction=0.1, infected_slices=1)
    assert hu.shape == (2, 512, 512)
    assert lesions[0].sum() > 0 and lesions[1].sum() == 0
    norm = amcseg.normalize_hu(hu)
    assert norm.min() >= 0.0 and norm.max() <= 1.0

    patches = amcseg.extract_train_patches(norm[0], lesions[0], seed=3, roi_boxes=5, negatives=2)
    assert len(patches) == 5 + 12
    for img, mask, label, row, col in patches[:5]:
        assert img.shape == (128, 128)
        assert label == "INFECTED" and mask.sum() > 0
        assert 0 <= row <= 384 and 0 <= col <= 384

    tiles = amcseg.extract_test_patches(norm[0])
    assert len(tiles) == 16

    sev = amcseg.severity(lesions, lungs)
    assert sev["grade"] in {"CT-0", "CT-1", "CT-2", "CT-3", "CT-4"}
    assert 0 <= sev["involvement_pct"] <= 100


def test_fuse_majority():
    a = np.full((4, 4), 0.9, dtype=np.float32)
    b = np.full((4, 4), 0.8, dtype=np.float32)
    c = np.full((4, 4), 0.1, dtype=np.float32)
    fused = amcseg.fuse([a, b, c])
    assert fused.shape == (4, 4)
    assert (fused == 1).all()


def test_confusion_and_auc():
    pred = np.array([[1, 1, 0, 0]], dtype=np.uint8)
    truth = np.array([[1, 0, 0, 1]], dtype=np.uint8)
    c = amcseg.confusion(pred, truth)
    assert (c["tp"], c["fp"], c["tn"], c["fn"]) == (1, 1, 1, 1)
    assert c["dsc"] == pytest.approx(0.5)

    probs = np.array([0.9, 0.8, 0.2, 0.1], dtype=np.float32)
    labels = np.array([1, 1, 0, 0], dtype=np.uint8)
    assert amcseg.roc_auc(probs, labels) == pytest.approx(1.0)
    assert amcseg.roc_auc(probs, np.ones(4, dtype=np.uint8)) is None


def test_checkpoint_roundtrip(tmp_path):
    m = amcseg.Model(variant="MSU_NET", base_channels=1, input_size=16, dropout=0.0)
    path = str(tmp_path / "model.amc")
    m.save(path)
    back = amcseg.load_model(path)
    assert back.parameter_count == m.parameter_count
    x = np.random.default_rng(1).random((1, 1, 16, 16), dtype=np.float32)
    assert np.array_equal(m.forward(x), back.forward(x))


def test_predict_volume_shapes():
    hu, lesions, _ = amcseg.make_phantom(9, 1, area_fraction=0.08, infected_slices=1)
    m = amcseg.Model(variant="UNET", base_channels=1, input_size=128, dropout=0.0)
    mask, probs = amcseg.predict_volume(m, hu)
    assert mask.shape == hu.shape
    assert probs.shape == hu.shape
    assert set(np.unique(mask)) <= {0, 1}


def test_jet_endpoints():
    assert amcseg.jet_color(1.0) == (255, 0, 0)
    assert amcseg.jet_color(0.0) == (0, 0, 255)
    assert amcseg.jet_color(0.5) == (0, 255, 0)
