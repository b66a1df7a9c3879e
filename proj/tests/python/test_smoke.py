"""End-to-end smoke coverage of the python surface: every major operation is
invoked once with small inputs and checked against behavior already pinned
down by the C++ test suite."""

import numpy as np
import pytest

import simic


def small_spec():
    spec = simic.SynthSpec()
    spec.image_size = 32
    spec.nm_per_px = 20.0
    spec.seed = 3
    return spec


def tiny_config(backbone="residual", attention="none", mode="full"):
    cfg = simic.ModelConfig()
    cfg.backbone = backbone
    cfg.attention = attention
    cfg.mode = mode
    cfg.embed_dim = 8
    cfg.heads = 2
    cfg.stage_widths = [3, 5, 7]
    cfg.input_size = 32
    return cfg


def test_synthetic_generation_labels_and_determinism():
    images, manifest = simic.generate_synthetic(small_spec(), 6)
    assert len(images) == 6 and len(manifest) == 6
    ids = [r.id for r in manifest.records]
    assert len(set(ids)) == 6
    for img, rec in zip(images, manifest.records):
        assert img.dtype == np.uint8 and img.shape == (32, 32)
        assert rec.split == "unsplit"
        assert 0.20 <= rec.width_um <= 0.45
        assert 0.30 <= rec.height_um <= 0.55
        assert 0.02 <= rec.radius_um <= 0.08
    again, _ = simic.generate_synthetic(small_spec(), 6)
    assert all(np.array_equal(a, b) for a, b in zip(images, again))


def test_measure_tip_recovers_render_parameters():
    img = simic.render_tip(64, 30.0, 40.0, 6.0)
    m = simic.measure_tip(img)
    assert m.width_px == pytest.approx(30.0, abs=2.0)
    assert m.height_px == pytest.approx(40.0, abs=2.0)
    assert m.radius_px == pytest.approx(6.0, rel=0.15)


def test_brightness_contrast_matches_closed_form():
    img = np.arange(256, dtype=np.uint8).reshape(16, 16)
    out = simic.apply_brightness_contrast(img, 1.6, -40.0)
    want = np.clip(1.6 * img.astype(np.float64) - 40.0, 0.0, 255.0)
    want = np.floor(want + 0.5).astype(np.uint8)
    assert np.array_equal(out, want)
    variants = simic.augment(img, simic.AugmentationSpec())
    assert len(variants) == 9


def test_split_protocol_and_expansion_counts():
    assignment = simic.split_assignment([f"s{i:05d}" for i in range(900)], 4)
    counts = {s: 0 for s in ("train", "val", "eval")}
    for label in assignment.values():
        counts[label] += 1
    assert (counts["train"], counts["val"], counts["eval"]) == (576, 144, 180)

    _, manifest = simic.generate_synthetic(small_spec(), 10)
    simic.assign_splits(manifest, 1)
    expanded = simic.expand_training_set(manifest, simic.AugmentationSpec())
    n_train = sum(1 for r in manifest.records if r.split == "train")
    assert sum(1 for r in expanded.records if r.split == "train") == 10 * n_train


def test_metrics_match_definitions():
    y = [0.1, 0.4, 0.2, 0.9]
    assert simic.rmse(y, y) == 0.0
    assert simic.r_squared(y, y) == pytest.approx(1.0, abs=1e-12)
    yhat = [v + 0.1 for v in y]
    assert simic.rmse(y, yhat) == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(ValueError):
        simic.r_squared([1.0, 1.0], [0.5, 0.5])


def test_full_mode_predicts_three_targets():
    model = simic.Model.build(tiny_config(), 5)
    model.norm.mean = [0.3, 0.4, 0.05]
    model.norm.stdev = [0.07, 0.07, 0.017]
    images, _ = simic.generate_synthetic(small_spec(), 3)
    pred = model.predict(np.stack(images))
    assert pred.shape == (3, 3)
    assert np.isfinite(pred).all()
    with pytest.raises(ValueError):
        model.predict(np.stack(images), structure=np.zeros((3, 2)))


def test_half_mode_requires_structure():
    model = simic.Model.build(tiny_config(mode="half", attention="additive"), 6)
    images, manifest = simic.generate_synthetic(small_spec(), 2)
    rec = manifest.records[0]
    with pytest.raises(ValueError):
        model.predict(images[0])
    pred = model.predict(images[0], structure=[rec.width_um, rec.height_um])
    assert pred.shape == (1, 1)


def test_train_eval_and_checkpoint_roundtrip(tmp_path):
    spec = small_spec()
    spec.seed = 9
    images, manifest = simic.generate_synthetic(spec, 16)
    for img, rec in zip(images, manifest.records):
        simic.write_image(str(tmp_path / rec.file), img)
    simic.assign_splits(manifest, 2)

    cfg = tiny_config(attention="mha")
    model = simic.Model.build(cfg, 7)
    tc = simic.TrainConfig()
    tc.max_epochs = 2
    tc.patience = 1
    tc.batch_size = 8
    tc.lr = 1e-3
    log = simic.train_model(model, manifest, str(tmp_path), tc)
    assert 1 <= log.best_epoch <= len(log.epochs) <= 2
    assert all(np.isfinite([e.train_loss, e.val_loss]).all() for e in log.epochs)

    report = simic.evaluate(model, manifest, str(tmp_path), "eval")
    assert report.target_names == ["width", "height", "radius"]
    assert len(report.rmse_um) == 3 and all(v >= 0 for v in report.rmse_um)

    path = str(tmp_path / "model.ckpt")
    simic.save_checkpoint(model, path)
    reloaded = simic.load_checkpoint(path, expected=cfg)
    batch = np.stack(images[:4])
    assert np.array_equal(model.predict(batch), reloaded.predict(batch))


def test_attention_maps_normalized_per_head():
    model = simic.Model.build(tiny_config(attention="mha"), 11)
    images, _ = simic.generate_synthetic(small_spec(), 1)
    maps = model.attention_maps(images[0])
    assert maps.shape == (2, 4, 4)  # 32px input, three stride-2 stages
    assert maps.min() >= 0.0
    np.testing.assert_allclose(maps.sum(axis=(1, 2)), 1.0, atol=1e-6)
