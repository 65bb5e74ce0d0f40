import json
import math
import os
import subprocess

import numpy as np
import pytest

import mismatch


def test_erf_ratios():
    assert mismatch.analytic_erf_ratio_pasb(3, 9, 0) == pytest.approx(3 * math.sqrt(0.5), rel=1e-12)
    assert mismatch.analytic_erf_ratio_nasb(1) == pytest.approx(0.8026, abs=1e-4)
    assert mismatch.path_weights() == [0.25, 0.5, 0.25]


def test_plain_erf_probe():
    r = mismatch.measure_plain_erf(2, seeds=[0, 1])
    assert r["support_extent"] == 5
    assert r["gradient_map"].shape == (32, 32)


def test_metrics():
    a = np.array([1.0, 1.0, 0.0, 0.0])
    b = np.array([1.0, 0.0, 1.0, 0.0])
    assert mismatch.iou(a, b) == pytest.approx(1 / 3)
    assert mismatch.dice_score(a, b) == pytest.approx(0.5)
    p = np.array([0.55, 0.45, 0.95, 1.0, 0.05, 0.7])
    y = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 0.0])
    stats = mismatch.bin_stats(p, y)
    assert len(stats) == 5
    ece = sum(s["count"] / len(p) * abs(s["gap"]) for s in stats)
    assert mismatch.ece(p, y) == pytest.approx(ece)
    u, pval, exact = mismatch.mann_whitney_u(np.array([1.0, 2, 3]), np.array([4.0, 5, 6]))
    assert (u, exact) == (0.0, True)
    assert pval == pytest.approx(0.1)


def test_dataset_generation_is_reproducible():
    cfg = json.dumps({"labeled": 2, "unlabeled": 3, "validation": 1, "test": 2, "seed": 5})
    a = mismatch.generate_dataset(cfg)
    b = mismatch.generate_dataset(cfg)
    assert [len(a[k]) for k in ("labeled", "unlabeled", "validation", "test")] == [2, 3, 1, 2]
    for x, y in zip(a["test"], b["test"]):
        np.testing.assert_array_equal(x["image"], y["image"])
        assert set(np.unique(x["mask"])) <= {0.0, 1.0}
    with pytest.raises(ValueError):
        mismatch.generate_dataset(json.dumps({"labled": 2}))


def test_mmt_round_trip(tmp_path):
    arr = np.arange(24, dtype=np.float64).reshape(2, 3, 4) / 8
    mismatch.write_mmt(tmp_path / "a.mmt", arr)
    np.testing.assert_array_equal(mismatch.read_mmt(tmp_path / "a.mmt"), arr)
    (tmp_path / "bad.mmt").write_bytes(b"nope")
    with pytest.raises(ValueError):
        mismatch.read_mmt(tmp_path / "bad.mmt")


def test_train_then_predict(tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps({
        "network": {"width": 4, "depth": 2},
        "train": {"epochs": 2, "avg_last_k": 2, "lr": 0.001},
        "data": {"labeled": 2, "unlabeled": 4, "validation": 2, "test": 3},
    }))
    run = tmp_path / "run"
    assert mismatch.run_cli(["train", "--config", str(cfg), "--out", str(run)]) == 0
    assert mismatch.run_cli(["train", "--out", str(run), "--bogus"]) != 0

    model = mismatch.Model(run)
    assert model.members >= 1
    images = np.random.default_rng(0).standard_normal((2, 1, 32, 32))
    prob = model.predict(images)
    assert prob.shape == (2, 1, 32, 32)
    assert np.all((prob > 0) & (prob < 1))


@pytest.mark.skipif("MISMATCH_CLI" not in os.environ, reason="CLI binary path not provided")
def test_cli_binary(tmp_path):
    out = tmp_path / "data"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": {"labeled": 1, "unlabeled": 1, "validation": 1, "test": 1}}))
    done = subprocess.run([os.environ["MISMATCH_CLI"], "gen-data", "--config", str(cfg), "--out", str(out)])
    assert done.returncode == 0
    assert (out / "meta.json").exists()
