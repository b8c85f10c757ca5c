import math

import numpy as np
import pytest

from dialmat.dialworld.generate import generate_world, sample_episode
from dialmat.dialworld.world import WorldConfig
from dialmat.maper import Maper, MaperConfig, make_deltas
from dialmat.mat import MatHyperParams, PerturbationState, init_perturbation
from dialmat.train import (NonFiniteLoss, TrainConfig, batch_loss, collect_steps, init_perturbations,
                           mat_inner_step, train_maper)

SMALL = MaperConfig(d_model=16, n_layers=1, n_heads=2, text_dims=(8, 8), text_heads=2,
                    image_dims=(8, 8), conv_channels=8, act_dim=8)


def corpus(n=3, seed=0):
    eps = [sample_episode(generate_world(seed + i), seed + i, 5, "train") for i in range(n)]
    return collect_steps(eps, WorldConfig())


def losses(history):
    return [r["loss"] for r in history if r["split"] == "train"]


def ascent_trials(n_models=10, per_model=20, eta=1e-3):
    """Fraction of single joint MAT steps that do not decrease the batch loss."""
    steps = corpus(6, seed=40)
    hp = MatHyperParams(eta=eta, eps_ball=0.5)
    ok = total = 0
    for s in range(n_models):
        model = Maper(MaperConfig(), seed=s)
        rng = np.random.default_rng(s)
        for _ in range(per_model):
            batch = [steps[i] for i in rng.choice(len(steps), size=8, replace=False)]
            states = {}
            for name, shape in model.cfg.perturbation_shapes().items():
                d = rng.normal(size=shape)
                # strictly interior: norm at most half the radius
                d *= rng.uniform(0.05, 0.5) * hp.eps_ball / np.linalg.norm(d)
                states[name] = PerturbationState(d, np.zeros(shape), np.zeros(shape), 0, hp)
            before = batch_loss(model, batch, make_deltas(states, False)).item()
            after = batch_loss(model, batch, make_deltas(mat_inner_step(model, batch, states),
                                                         False)).item()
            ok += after >= before
            total += 1
    return ok / total


def test_mat_disabled_matches_delta_frozen_at_zero():
    steps = corpus()
    off = train_maper(TrainConfig(maper=SMALL, epochs=10, batch_size=16, mat_enabled=False), steps)
    zero = train_maper(TrainConfig(maper=SMALL, epochs=10, batch_size=16, mat_enabled=True,
                                   inner_steps=0), steps)
    assert losses(off.history) == losses(zero.history)
    assert zero.perturbations and not any(st.delta.any() for st in zero.perturbations.values())
    for a, b in zip(off.model.parameters(), zero.model.parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_inner_step_ascends_loss():
    assert ascent_trials(n_models=2, per_model=10) >= 0.9


def test_inner_step_leaves_weights_and_grads_untouched():
    steps = corpus(1)
    model = Maper(SMALL, seed=0)
    before = [p.data.copy() for p in model.parameters()]
    states = init_perturbations(TrainConfig(maper=SMALL))
    new = mat_inner_step(model, steps[:4], states)
    assert all(new[m].t == 1 for m in new)
    assert all(p.grad is None for p in model.parameters())
    for p, b in zip(model.parameters(), before):
        np.testing.assert_array_equal(p.data, b)


def test_perturbations_stay_in_ball_during_training():
    cfg = TrainConfig(maper=SMALL, epochs=2, batch_size=8, mat=MatHyperParams(eta=0.2, eps_ball=0.3),
                      inner_steps=2)
    res = train_maper(cfg, corpus(2))
    for st in res.perturbations.values():
        assert np.linalg.norm(st.delta) <= 0.3 + 1e-9 and st.t > 0


def test_action_only_variant_trains_one_perturbation():
    res = train_maper(TrainConfig(maper=SMALL, epochs=1, mat_modalities=("act",)), corpus(1))
    assert set(res.perturbations) == {"act"}


def test_training_is_reproducible():
    steps = corpus(2)
    a = train_maper(TrainConfig(maper=SMALL, epochs=2, batch_size=8, seed=3), steps)
    b = train_maper(TrainConfig(maper=SMALL, epochs=2, batch_size=8, seed=3), steps)
    assert losses(a.history) == losses(b.history)


def test_loss_decreases_on_small_corpus():
    res = train_maper(TrainConfig(maper=SMALL, epochs=15, batch_size=16, lr=5e-3), corpus(3))
    curve = losses(res.history)
    assert curve[-1] < 0.5 * curve[0]


def test_invalid_train_configs():
    with pytest.raises(ValueError):
        TrainConfig(mat_modalities=("sound",))
    with pytest.raises(ValueError):
        TrainConfig(inner_steps=-1)
    with pytest.raises(ValueError):
        TrainConfig(mat_overrides={"sound": {}})
    with pytest.raises(ValueError):
        train_maper(TrainConfig(maper=SMALL), [])


def test_non_finite_loss_is_reported(monkeypatch):
    import dialmat.train as trn

    class Poisoned(trn.Maper):
        def __init__(self, *a, **k):
            super().__init__(*a, **k)
            self.type_head.weight.data[:] = math.nan

    monkeypatch.setattr(trn, "Maper", Poisoned)
    with pytest.raises(NonFiniteLoss):
        train_maper(TrainConfig(maper=SMALL, epochs=1), corpus(1))


def test_per_modality_overrides():
    cfg = TrainConfig(maper=SMALL, mat_overrides={"img": {"eps_ball": 0.2}})
    states = init_perturbations(cfg)
    assert states["img"].hp.eps_ball == 0.2 and states["txt"].hp.eps_ball == cfg.mat.eps_ball
    assert init_perturbation((2,)).hp == MatHyperParams()
