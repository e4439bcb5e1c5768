import json
import math

import pytest

import radarvel as rv


def box(x, y, vel=(0.0, 0.0), score=1.0):
    return rv.OBB([x, y, 0.0], vel=list(vel), score_fg=score)


def test_update_box_moves_center():
    b = rv.update_box(box(10.0, 0.0, vel=(2.0, -1.0)), 0.6)
    assert b.center[0] == pytest.approx(11.2)
    assert b.center[1] == pytest.approx(-0.6)


def test_filter_confident_is_strict():
    boxes = [box(0, 0, score=0.9), box(1, 0, score=0.5), box(2, 0, score=0.2)]
    kept = rv.filter_confident(boxes, 0.5)
    assert [b.score_fg for b in kept] == [0.9]


def test_velocity_loss_values():
    assert rv.velocity_loss([box(0, 0)], [box(1.5, 0)])["value"] == pytest.approx(0.075)
    assert rv.velocity_loss([box(17, 0, vel=(5, 0))], [box(20, 0)])["value"] == 0.0


def test_matchers():
    pairs = rv.match_boxes([box(0, 0), box(10, 0)], [box(9, 0), box(0.5, 0)])
    assert pairs == [(0, 1, 0.5), (1, 0, 1.0)]
    m = rv.match_for_eval([box(0, 0, score=0.9), box(30, 0, score=0.4)], [box(0.2, 0)], 2.0)
    assert m["tp"] == [(0, 0)]
    assert m["fp"] == [1]
    assert m["fn"] == []


def test_metrics():
    gts = [box(10.0 * i, 0) for i in range(10)]
    preds = [box(10.0 * i, 0, score=0.9 - 0.1 * i) for i in range(5)]
    r = rv.evaluate_frames([(preds, gts)])
    assert r["AP"] == pytest.approx(0.4 / 0.9)
    assert r["TP"] == 5 and r["FN"] == 5
    assert r["AVE"] == pytest.approx(0.0)


def test_doppler():
    raw, comp = rv.doppler([5, 0, 0], [10, 0], [0, 0, 0], [4, 3])
    assert raw == pytest.approx(6.0)
    assert comp == pytest.approx(10.0)
    with pytest.raises(ValueError):
        rv.doppler([0.05, 0, 0], [1, 0], [0, 0, 0], [0, 0])


def test_pipeline(tmp_path):
    data, ckpt = tmp_path / "data", tmp_path / "ckpt"
    rv.simulate(json.dumps({"seed": 2}), data, n_pairs=10)
    assert rv.dataset_sizes(data) == (8, 2)
    rv.train(json.dumps({"model": {"preset": "compact"}, "phase1_epochs": 1, "phase2_epochs": 1}), data, ckpt)
    report = rv.evaluate(ckpt / "final.ckpt", data)
    assert set(report) >= {"AP", "AP4.0", "AVE", "AVE_tangential", "AVE_radial", "TP", "FP", "FN"}
    assert 0.0 <= report["AP"] <= 1.0
    with pytest.raises(OSError):
        rv.evaluate(tmp_path / "missing.ckpt", data)
    with pytest.raises(ValueError):
        rv.evaluate(ckpt / "final.ckpt", data, split="test")


def test_gradcheck():
    results = rv.gradcheck(1)
    assert results
    assert all(ok and err < 1e-4 and math.isfinite(err) for _, err, ok in results)
