import json
import math

import numpy as np
import pytest

import dractrl


def test_formulas():
    assert dractrl.smoothstep_beta(0.25) == 0.15625
    assert abs(dractrl.loss_weight(0, 2) - 0.0645537322111) < 1e-10
    assert abs(dractrl.mixup_value(0.0, 1.0, 0.5, 2.2) - 0.7297400528407231) < 1e-12
    with pytest.raises(ValueError):
        dractrl.smoothstep_beta(-1.0)


def test_transition_frames():
    a = np.zeros((8, 8, 3), np.float32)
    b = np.ones((8, 8, 3), np.float32)
    frames, alphas = dractrl.build_transition("fade", a, b, k=2)
    assert len(frames) == 13 and len(alphas) == 13
    assert np.array_equal(frames[0], a) and np.array_equal(frames[-1], b)
    mid = dractrl.mixup_frame(a, b, 0.5)
    assert mid.shape == (8, 8, 3)
    assert abs(float(mid[0, 0, 0]) - 0.7297400528407231) < 1e-6


def test_codec_roundtrip():
    img = np.full((32, 32, 3), 0.5, np.float32)
    z = dractrl.encode(img)
    assert z.shape == (16, 8, 8)
    assert np.allclose(dractrl.decode(z), img, atol=1e-6)


def test_layout_helpers():
    pos = dractrl.fspe_positions(4, 2, 2, 3, delta=12)
    assert sorted({p[0] for p in pos[:16]}) == [0, 12, 24, 36]
    mask = dractrl.attention_mask(4, 2, 2, 3, 2)
    assert mask.shape == (21, 21)
    assert mask[0, 4]  # condition image -> generated frames blocked
    assert not mask[4, 0]


def test_metrics_and_pairs():
    pair = dractrl.dataset_pair("colorize", seed=3, index=1)
    assert pair["condition"].shape == (32, 32, 3)
    assert len(pair["frames"]) == 13
    assert dractrl.mse(pair["target"], pair["target"]) == 0.0
    assert dractrl.ssim(pair["target"], pair["target"]) == pytest.approx(1.0)
    assert 0.0 <= dractrl.edge_f1(pair["condition"], pair["target"]) <= 1.0


def test_config():
    cfg = json.loads(dractrl.parse_config('{"model.omega": 0}'))
    assert cfg["model.omega"] == 0 and cfg["model.delta"] == 12
    assert "train.lr" in dractrl.config_keys()
    with pytest.raises(ValueError, match="fooo"):
        dractrl.parse_config('{"fooo": 1}')


def test_model_train_generate_roundtrip(tmp_path):
    tiny = json.dumps({"model.dim": 32, "model.heads": 2, "model.layers": 1, "model.mlp_hidden": 64,
                       "model.lora_rank": 4, "train.batch": 1})
    m = dractrl.Model.create(tiny)
    losses = m.pretrain(3)
    assert len(losses) == 3 and all(math.isfinite(x) for x in losses)
    losses = m.finetune(2)
    assert m.has_adapters and len(losses) == 2
    cond = dractrl.dataset_pair("colorize")["condition"]
    out = m.generate(cond, "a red circle on a blue background", steps=3, seed=1)
    assert out.shape == (32, 32, 3)
    path = tmp_path / "m.ckpt"
    m.save(path)
    back = dractrl.Model.load(path)
    assert np.array_equal(back.generate(cond, "a red circle on a blue background", steps=3, seed=1), out)
    reports = back.evaluate(2)
    assert len(reports) == 2 and reports[0]["metric"] == "mse"
    with pytest.raises(OSError):
        dractrl.Model.load(tmp_path / "missing.ckpt")
