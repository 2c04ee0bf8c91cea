import math

import numpy as np
import pytest
import torch

from aecct import training
from aecct.codes import CodeMismatchError, syndrome
from aecct.inference import FrozenAECCT
from aecct.model import AAP, AECCT, ModelConfig
from aecct.training import (PHASE1, TrainConfig, Trainer, TrainingDiverged, batch_rng, load_model,
                            loss_fn, make_batch, save_model, score, train_phase1, train_phase2,
                            validate)

TINY_MODEL = ModelConfig(n_blocks=1, dim=8, heads=2, h_first=1, h_second=1, d_spe=4, spe_heads=2)


def tiny_train(**kw):
    base = dict(epochs=1, batches_per_epoch=6, batch_size=16, lr_max=1e-3, eval_every=3,
                val_frames=200)
    base.update(kw)
    return TrainConfig(**base)


def test_batch_is_zero_codeword_traffic(hamming):
    feats, targets, ebn0 = make_batch(hamming, 64, (3, 7), np.random.default_rng(0))
    assert feats.shape == (64, 10) and targets.shape == (64, 7)
    # with x_s = +1 the flip targets are exactly the hard decisions
    assert np.array_equal(feats[:, 7:], 1.0 - 2.0 * syndrome(hamming, targets))
    assert ((ebn0 >= 3) & (ebn0 <= 7)).all()


def test_snr_histogram_is_uniform(hamming):
    _, _, ebn0 = make_batch(hamming, 1_000_000, (3, 7), np.random.default_rng(1))
    counts, _ = np.histogram(ebn0, bins=8, range=(3, 7))
    assert np.abs(counts / 125_000 - 1).max() < 0.02


def test_batch_stream_is_reproducible(hamming):
    a = make_batch(hamming, 8, (3, 7), batch_rng(5, PHASE1, 17))
    b = make_batch(hamming, 8, (3, 7), batch_rng(5, PHASE1, 17))
    c = make_batch(hamming, 8, (3, 7), batch_rng(5, PHASE1, 18))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])


def test_loss_values():
    targets = np.array([[0, 1, 1], [1, 0, 0]])
    assert loss_fn(torch.zeros(2, 3), targets).item() == pytest.approx(math.log(2))
    confident = torch.as_tensor(np.where(targets == 1, 50.0, -50.0))
    assert loss_fn(confident, targets).item() < 1e-20
    z = np.random.default_rng(0).standard_normal((2, 3))
    sig = 1 / (1 + np.exp(-z))
    naive = -np.mean(targets * np.log(sig) + (1 - targets) * np.log(1 - sig))
    assert loss_fn(torch.as_tensor(z), targets).item() == pytest.approx(naive, abs=1e-6)


def test_score_floors_zero_error_points():
    assert score({4.0: math.exp(-3), 5.0: math.exp(-5)}) == pytest.approx(4.0)
    assert score({4.0: 0.0}, bits=1000) == pytest.approx(math.log(1000))
    assert score({4.0: 0.0}) == math.inf


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(snr_range_db=(7, 3))
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    assert TrainConfig().total_steps == 40_000


def test_resume_is_bit_identical(hamming, tmp_path):
    cfg = tiny_train()
    straight = Trainer(AECCT(hamming, TINY_MODEL, seed=0), cfg).run()
    first = Trainer(AECCT(hamming, TINY_MODEL, seed=0), cfg).run(until=4)
    first.save(tmp_path / "mid.ckpt")
    resumed = Trainer.load(tmp_path / "mid.ckpt", hamming).run()
    for (name, a), (_, b) in zip(straight.model.state_dict().items(),
                                 resumed.model.state_dict().items()):
        assert torch.equal(a, b), name
    assert straight.history == resumed.history
    assert straight.best_score == resumed.best_score


def test_equal_seeds_give_identical_checkpoints(hamming, tmp_path):
    for tag in ("a", "b"):
        train_phase1(hamming, TINY_MODEL, tiny_train(), checkpoint_path=tmp_path / f"{tag}.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_phase1_returns_best_checkpoint(hamming):
    trainer = train_phase1(hamming, TINY_MODEL, tiny_train())
    scores = [h["score"] for h in trainer.history]
    assert [h["step"] for h in trainer.history] == [3, 6]
    assert trainer.best_score == max(scores)
    assert score(validate(trainer.model.predict_logits, hamming, trainer.cfg),
                 200 * 7) == pytest.approx(trainer.best_score)


def test_loss_windows(hamming, monkeypatch):
    monkeypatch.setattr(training, "LOSS_WINDOW", 2)
    trainer = Trainer(AECCT(hamming, TINY_MODEL), tiny_train()).run()
    assert len(trainer.loss_windows) == 3


def test_divergence_guard(hamming):
    model = AECCT(hamming, TINY_MODEL)
    with torch.no_grad():
        model.out.bias.fill_(float("nan"))
    with pytest.raises(TrainingDiverged):
        Trainer(model, tiny_train()).run()


def test_phase2_quantizes_and_freezes(hamming, tmp_path):
    p1 = train_phase1(hamming, TINY_MODEL, tiny_train())
    p2 = train_phase2(p1.model, tiny_train(lr_max=1e-2), checkpoint_path=tmp_path / "p2.ckpt",
                      frozen_path=tmp_path / "m.frz")
    assert p1.model.cfg.quant_mode != AAP  # phase-1 model untouched
    assert p2.model.cfg.quant_mode == AAP
    assert [h["step"] for h in p2.history] == [0, 3, 6]
    deltas = [layer.delta.item() for _, layer in p2.model.aap_layers()]
    assert min(deltas) >= 1e-3
    assert any(abs(d - 1) > 0.01 for d in deltas)
    frozen = FrozenAECCT.load(tmp_path / "m.frz", hamming)
    reloaded, meta = load_model(tmp_path / "p2.ckpt", hamming)
    assert meta["phase"] == "phase2"
    y = np.random.default_rng(0).standard_normal((5, 7)) + 1
    assert np.array_equal(frozen.decode(y), reloaded.freeze().decode(y))


def test_checkpoint_rejects_other_code(hamming, bch31, tmp_path):
    save_model(AECCT(hamming, TINY_MODEL), tmp_path / "m.ckpt", PHASE1)
    with pytest.raises(CodeMismatchError):
        load_model(tmp_path / "m.ckpt", bch31)


def test_phase1_rejects_quantized_config(hamming):
    cfg = ModelConfig(**{**TINY_MODEL.to_dict(), "quant_mode": AAP})
    with pytest.raises(ValueError):
        train_phase1(hamming, cfg, tiny_train())
