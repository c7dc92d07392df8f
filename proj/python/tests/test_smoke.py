import numpy as np
import pytest

import douap


@pytest.fixture(scope="module")
def world():
    data = douap.generate_dataset(5, 256, 24)
    cfg = douap.TrainConfig()
    cfg.epochs = 4
    cfg.batch = 32
    model, losses = douap.train(data, cfg)
    return data, model, losses


def test_dataset_shapes():
    data = douap.generate_dataset(1, 8, 4)
    assert len(data.train) == 8 and len(data.test) == 4
    sample = data.train[0]
    assert sample.image.shape == (16, 16, 3)
    assert len(sample.tokens) == 8
    assert sample.key == "blue-cross-BR+blue-stripes-TR"
    assert data.to_bytes() == douap.generate_dataset(1, 8, 4).to_bytes()


def test_training_lowers_loss(world):
    _, model, losses = world
    assert len(losses) == 4
    assert losses[-1] < losses[0]
    emb = model.encode_images([s.image for s in world[0].test])
    assert emb.shape == (24, 32)
    assert np.allclose(np.linalg.norm(emb, axis=1), 1.0)


def test_attack_respects_budget(world, tmp_path):
    data, model, _ = world
    cfg = douap.AttackConfig()
    cfg.epochs = 1
    cfg.batch = 32
    cfg.record_wallclock = False
    uap = douap.attack(model, data, cfg)
    assert uap.linf <= cfg.eps_v + 1e-12
    assert 3 <= uap.token <= 17
    uap.save(tmp_path / "u.json")
    back = douap.load_uap(tmp_path / "u.json")
    assert np.array_equal(back.delta_v, uap.delta_v)
    gen = douap.attack(model, data, cfg, method="generator")
    assert gen.method == "generator"


def test_zero_uap_flips_nothing(world):
    data, model, _ = world
    tr, ir = douap.asr_at_k(model, data.test, douap.zero_uap())
    assert tr in (0.0, None) and ir in (0.0, None)
    assert douap.recall_at_k(model, data.test, 24) == (1.0, 1.0)


def test_report_and_probe(world):
    data, model, _ = world
    report = douap.evaluate(model, data, douap.zero_uap())
    assert report["format"] == "douap-report"
    assert report["control"]["asr_at_1"]["tr_flipped"] == 0
    assert douap.pair_similarity(model, data.test, "flip") == douap.pair_similarity(model, data.test, "flip")


def test_errors_are_raised(world):
    data, model, _ = world
    cfg = douap.AttackConfig()
    cfg.beta = 2.0
    with pytest.raises(douap.DouapError, match="beta"):
        douap.attack(model, data, cfg)
    with pytest.raises(douap.DouapError):
        douap.load_model("/nonexistent/model.ckpt")
