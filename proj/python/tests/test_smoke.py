import math

import numpy as np
import pytest

import fusetrack as ft

TINY = """
model.dim=16
model.depth=2
model.heads=2
model.head_channels=8
model.reliability_channels=8
train.batch=2
data.sequences=4
data.frames=30
"""


def test_iou_one_seventh():
    assert ft.iou((0, 0, 2, 2), (1, 1, 2, 2)) == pytest.approx(1 / 7, abs=1e-15)
    assert ft.center_error((0, 0, 2, 2), (3, 4, 2, 2)) == 5.0


def test_evaluate_precision_and_max_variant():
    gt = (40.0, 40.0, 20.0, 20.0)
    pred = [(45.0, 40.0, 20.0, 20.0), (65.0, 40.0, 20.0, 20.0), (50.0, 40.0, 20.0, 20.0)]
    r = ft.evaluate(pred, [gt] * 3)
    assert r["frames"] == 3
    assert r["pr"] == pytest.approx(2 / 3)
    assert r["mpr"] == r["pr"]
    far = (100.0, 100.0, 20.0, 20.0)
    r = ft.evaluate([far] * 3, [gt] * 3, [(101.0, 100.0, 20.0, 20.0)] * 3)
    assert r["pr"] == 0.0 and r["mpr"] == 1.0


def test_total_loss_weights():
    total, lr, lt = ft.total_loss(1.0, 3.0, 0.5, -0.5)
    assert abs(lr + lt - 1.0) <= 1e-15
    assert 1.0 <= total <= 3.0
    assert lr == pytest.approx(1 / (1 + math.exp(-1.0)))


def test_config_round_trip_and_errors():
    text = ft.parse_config(TINY)
    assert "model.dim=16" in text
    assert ft.parse_config(text) == text
    with pytest.raises(ft.ConfigError, match="no.such"):
        ft.parse_config("no.such=1\n")


def test_render_frame_shapes():
    rgb, thermal, box = ft.render_frame(ft.default_config(), 5, 0, [("rgb", "blank", 0, 3)])
    assert rgb.shape == thermal.shape and rgb.shape[2] == 3
    assert rgb.dtype == np.float64
    assert np.all(rgb == rgb.flat[0])
    assert len(box) == 4


def test_train_track_save_load(tmp_path):
    a = ft.Tracker(TINY)
    b = ft.Tracker(TINY)
    assert a.digest() == b.digest()
    curve = a.train(3)
    assert [r["step"] for r in curve] == [1, 2, 3]
    assert all(abs(r["lambda_rgb"] + r["lambda_t"] - 1) < 1e-12 for r in curve)
    # Split training equals one run of the same length.
    b.train(1)
    b.train(2)
    assert a.digest() == b.digest()

    out = a.track(11, [("thermal", "noise", 5, 15)])
    assert len(out) == 30
    assert {o["chosen"] for o in out} <= {"rgb", "thermal"}

    path = str(tmp_path / "model.ckpt")
    a.save(path)
    c = ft.Tracker.load(path)
    assert c.digest() == a.digest()
    assert c.track(11, [("thermal", "noise", 5, 15)]) == out


def test_bench_row():
    row = ft.bench(TINY.replace("model.depth=2", "model.depth=3"), 16, warmup=1, samples=3)
    assert row["dim"] == 16 and row["samples"] == 3
    assert row["ratio"] == pytest.approx(row["three_stage_ms"] / row["unified_ms"])
