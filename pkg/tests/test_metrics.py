import json

import numpy as np
import pytest

from asfderain.datastore import Manifest, ManifestEntry, ManifestError, VideoClip, save_clip
from asfderain.metrics import (
    ClipScore,
    MetricsReport,
    evaluate,
    gaussian_window,
    gradient_distance,
    luminance,
    psnr_y,
    ssim,
    tlp,
)


def test_luminance_weights():
    assert luminance(np.array([1.0, 1.0, 1.0])) == pytest.approx(255.0)
    assert luminance(np.array([1.0, 0.0, 0.0])) == pytest.approx(0.299 * 255)


def test_psnr_unit_luminance_error():
    gt = np.full((8, 8, 3), 100 / 255)
    pred = gt + 1 / 255
    # 10 log10(255^2 / 1)
    assert psnr_y(pred, gt) == pytest.approx(48.1308036086791, abs=1e-9)


def test_psnr_max_error_is_zero_db():
    assert psnr_y(np.ones((4, 4, 3)), np.zeros((4, 4, 3))) == pytest.approx(0.0, abs=1e-9)


def test_psnr_identical_is_capped():
    x = np.random.default_rng(0).uniform(size=(4, 4, 3))
    assert psnr_y(x, x) == 100.0


def test_ssim_constant_images_closed_form():
    a, b = 0.2, 0.6
    ya, yb = 255 * a, 255 * b
    c1 = (0.01 * 255) ** 2
    expect = (2 * ya * yb + c1) / (ya ** 2 + yb ** 2 + c1)
    got = ssim(np.full((16, 16, 3), a), np.full((16, 16, 3), b))
    assert got == pytest.approx(expect, abs=1e-9)


def test_ssim_identical_is_one():
    x = np.random.default_rng(1).uniform(size=(20, 20, 3))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)


def test_ssim_window_normalised():
    g = gaussian_window()
    assert g.sum() == pytest.approx(1.0) and len(g) == 11
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_tlp_zero_on_perfect_restoration():
    clip = np.random.default_rng(2).uniform(size=(4, 16, 16, 3))
    assert tlp(clip, clip.copy()) == 0.0


def test_tlp_with_custom_distance():
    r = np.zeros((3, 2, 2, 3))
    g = np.zeros((3, 2, 2, 3))
    r[1] = 0.5
    dist = lambda a, b: float(np.abs(a - b).mean())
    # pairs: |0.5 - 0|, |0.5 - 0| -> mean 0.5
    assert tlp(r, g, dist) == pytest.approx(0.5)


def test_gradient_distance_properties():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(size=(2, 16, 16, 3))
    assert gradient_distance(a, a) == 0.0
    assert gradient_distance(a, b) == pytest.approx(gradient_distance(b, a))
    assert gradient_distance(a, a + 0.1) == pytest.approx(0.0, abs=1e-12)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        psnr_y(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


def test_report_json(tmp_path):
    rep = MetricsReport([ClipScore("a", 30.0, 0.9, 0.01), ClipScore("b", 32.0, 0.8, 0.03)], {"seed": 1})
    assert rep.means == pytest.approx({"psnr_y": 31.0, "ssim": 0.85, "tlp": 0.02})
    data = json.loads(rep.save(tmp_path / "r.json").read_text())
    assert data["clips"][1]["id"] == "b" and data["meta"] == {"seed": 1}


def test_evaluate_identity_restorer(tmp_path):
    rng = np.random.default_rng(4)
    entries = []
    for i in range(2):
        clean = rng.uniform(0, 1, (3, 12, 12, 3))
        for role in ("clean", "rainy"):
            cid = f"v{i}_{role}"
            save_clip(VideoClip(clean, role), tmp_path / cid)
            entries.append(ManifestEntry(cid, cid, 3, 12, 12, role))
    m = Manifest(entries, "test", root=tmp_path)
    rep = evaluate(lambda clip: clip, m)
    assert [c.id for c in rep.clips] == ["v0", "v1"]
    assert rep.means["psnr_y"] == 100.0 and rep.means["tlp"] == 0.0
    with pytest.raises(ManifestError):
        evaluate(lambda c: c, Manifest(entries, "train", root=tmp_path))
