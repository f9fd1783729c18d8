import numpy as np
import pytest

from papez.autodiff import load_arrays
from papez.config import TrainConfig
from papez.datagen import MixSpec
from papez.train import eval_template, evaluate, load_training_state, train, train_template

from conftest import tiny_config

TRAIN = dict(steps=8, epoch_size=3, duration=0.1, lr=1e-3)


def test_same_seed_same_losses():
    a = train(tiny_config(), TrainConfig(seed=5, **TRAIN))
    b = train(tiny_config(), TrainConfig(seed=5, **TRAIN))
    assert [h.loss for h in a.history] == [h.loss for h in b.history]
    c = train(tiny_config(), TrainConfig(seed=6, **TRAIN))
    assert [h.loss for h in a.history] != [h.loss for h in c.history]


def test_resume_matches_uninterrupted(tmp_path):
    cfg = TrainConfig(seed=2, **TRAIN)
    full = train(tiny_config(), cfg, outdir=tmp_path / "full")
    train(tiny_config(), cfg, outdir=tmp_path / "part", steps=4)
    rest = train(None, None, outdir=tmp_path / "part", resume=tmp_path / "part", steps=4)
    assert rest.start_step == 4
    assert [h.loss for h in rest.history] == [h.loss for h in full.history[4:]]
    a, b = load_arrays(tmp_path / "full" / "model.ckpt"), load_arrays(tmp_path / "part" / "model.ckpt")
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_epoch_boundaries_decay_lr(tmp_path):
    res = train(tiny_config(), TrainConfig(seed=0, **TRAIN), outdir=tmp_path)
    lrs = [h.lr for h in res.history]
    assert lrs[:3] == [1e-3] * 3
    assert lrs[3] == pytest.approx(1e-3 * 0.98)
    assert lrs[6] == pytest.approx(1e-3 * 0.98 ** 2)
    assert len(res.epoch_means(3)) == 3
    _, opt, _, _ = load_training_state(tmp_path)
    assert opt.state.step == 8 and opt.state.epoch == 2


def test_templates_are_disjoint():
    cfg = TrainConfig(seed=0)
    assert train_template(cfg).seed != eval_template(cfg).seed
    assert eval_template(cfg).seed - train_template(cfg).seed >= cfg.steps


def test_evaluate_reports_per_item_metrics():
    res = train(tiny_config(), TrainConfig(seed=0, steps=1, duration=0.1))
    ev = evaluate(res.model, MixSpec(seed=500, duration=0.1), 3)
    assert ev.si_snr_i.shape == (3,) and ev.sdr_i.shape == (3,)
    assert np.isfinite(ev.si_snr_i).all()
    assert 0.0 <= ev.fraction_above(0.0) <= 1.0
    assert 1.0 <= ev.mean_depth <= 3.0
