import json
import math

import numpy as np
import pytest

import demorph


def face(seed, variation=0, res=16):
    return demorph.render_bonafide(seed, variation, res)


def test_rendering_and_morph():
    a = face(1)
    b = face(2)
    assert a.shape == (3, 16, 16)
    assert a.dtype == np.float32
    assert 0.0 <= a.min() and a.max() <= 1.0
    m = demorph.make_morph(a, b, 0.5)
    np.testing.assert_allclose(m, 0.5 * a + 0.5 * b, atol=1e-6)
    assert np.array_equal(demorph.make_morph(a, b, 0.3), demorph.make_morph(b, a, 0.7))


def test_generate_dataset_counts():
    samples = demorph.generate_dataset(4, 1, [0.3, 0.7], 16, 5)
    assert len(samples) == 12
    assert {(s["id1"], s["id2"]) for s in samples} == {(i, j) for i in range(4) for j in range(i + 1, 4)}


def test_toy_comparator():
    a = face(3, res=64)
    assert demorph.similarity(a, a) == pytest.approx(1.0)
    assert demorph.is_match(a, face(3, 1, 64))
    assert not demorph.is_match(a, face(4, 0, 64))
    assert len(demorph.embed(a)) == 64


def test_losses():
    rng = np.random.default_rng(0)
    x = rng.random((3, 8, 8))
    comps = [rng.random((3, 8, 8)) for _ in range(3)]
    rec = rng.random((3, 8, 8))
    lam = demorph.default_lambda(3)
    assert lam == 0.25
    l1 = lambda p, q: float(np.mean(np.abs(p - q)))
    pen = math.exp(-sum(l1(x, c) for c in comps)) + math.exp(
        -sum(l1(comps[i], comps[j]) for i in range(3) for j in range(i + 1, 3)))
    expected = lam * math.exp(l1(x, rec)) + (1 - lam) * pen
    assert demorph.decomposition_loss(x, rec, comps) == pytest.approx(expected, abs=1e-12)

    b1, b2 = rng.random((3, 8, 8)), rng.random((3, 8, 8))
    assert demorph.crossroad_loss(b1, b2, b1, b2) == 0.0
    assert demorph.crossroad_loss(b2, b1, b1, b2) == 0.0
    o1, o2 = rng.random((3, 8, 8)), rng.random((3, 8, 8))
    assert demorph.crossroad_loss(o1, o2, b1, b2) == demorph.crossroad_loss(o2, o1, b1, b2)
    with pytest.raises(demorph.ConfigError):
        demorph.decomposition_loss(x, rec, comps, lam=1.5)


def test_metrics():
    rng = np.random.default_rng(1)
    a = rng.random((3, 32, 32)).astype(np.float32)
    assert demorph.ssim(a, a) == pytest.approx(1.0)
    assert demorph.psnr(a, a) == 100.0
    feats = rng.normal(size=(30, 4)).tolist()
    assert abs(demorph.fid_from_features(feats, feats)) <= 1e-6
    with pytest.raises(demorph.MetricError):
        demorph.fid_from_features(feats[:3], feats)
    b1, b2 = face(10, res=64), face(11, res=64)
    assert demorph.restoration_accuracy([(b1, b2, b1, b2)]) == (1.0, 1.0)
    assert demorph.restoration_accuracy([(b1, b1, b1, b2)])[1] == 0.0


def test_model_shapes_and_errors():
    assert demorph.NetworkConfig.full_scale().latent_shape() == [1024, 14, 14]
    cfg = demorph.NetworkConfig(k=3, resolution=16, base_channels=2, depth=3, heads=2)
    model = demorph.Model(cfg, seed=1)
    assert model.latent_shape() == [8, 4, 4]
    img = face(5)
    comps = model.decompose(img)
    assert len(comps) == 3 and all(c.shape == img.shape for c in comps)
    o1, o2, _ = model.demorph(img)
    assert o1.shape == img.shape and o2.shape == img.shape
    assert model.merger_scales(1) == pytest.approx([1.0, 1.0, 1.0])
    with pytest.raises(demorph.DimensionError):
        model.decompose(face(5, res=32))
    with pytest.raises(demorph.ConfigError):
        demorph.NetworkConfig(resolution=20)


def test_pipeline_roundtrip(tmp_path):
    cfg = demorph.desk_config("demorphing")
    cfg["train"].update(epochs=2, net=dict(cfg["train"]["net"], resolution=16, base_channels=2, depth=3))
    cfg["data"]["non_morph_probes"] = 4
    assert demorph.validate_config(cfg) == []
    demorph.generate_data(cfg, tmp_path / "data")
    manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())
    assert len(manifest["morphs"]) == 15

    trace, ckpt = demorph.train(cfg, tmp_path / "data", tmp_path / "run")
    assert [t[0] for t in trace] == [0, 1]
    model = demorph.Model.load(ckpt)
    assert model.epochs_done == 2
    report = demorph.evaluate(ckpt, tmp_path / "data", cfg)
    assert report["mode"] == "demorphing"
    assert 0.0 <= report["test"]["subject1_accuracy"] <= 1.0
    assert report == demorph.evaluate(ckpt, tmp_path / "data", cfg)

    (tmp_path / "run" / "checkpoints" / "final" / "manifest.json").write_text("{")
    with pytest.raises(demorph.IntegrityError):
        demorph.Model.load(ckpt)
