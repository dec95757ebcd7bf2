import numpy as np
import pytest

from stfbnn.attacks import (
    AttackConfig,
    adversarial_train,
    attack_eval,
    fgsm,
    mi_attack,
    mi_curve,
    pgd,
)
from stfbnn.bayes import StfModel, init_variational
from stfbnn.data import make_two_moons
from stfbnn.errors import InputError
from stfbnn.nn import SgdConfig, TrainConfig, accuracy, forward, train_deterministic
from stfbnn.rng import Prng

from conftest import random_dataset, tiny_model


def unit_box_dataset(m, dim, k, seed=0):
    """Features inside [0, 1], where the default clip range is meaningful."""
    from stfbnn.data import Dataset
    prng = Prng(seed)
    return Dataset(prng.uniform((m, dim)), prng.integers(m, 0, k), k)


def test_attack_config_validation():
    with pytest.raises(InputError):
        AttackConfig(radius=-0.1)
    with pytest.raises(InputError):
        AttackConfig(radius=0.1, steps=0)
    with pytest.raises(InputError):
        AttackConfig(radius=0.1, step_size=0.0)
    assert AttackConfig(radius=0.2, steps=10).resolved_step() == pytest.approx(0.05)
    assert AttackConfig(radius=0.2, step_size=0.01).resolved_step() == 0.01


@pytest.mark.parametrize("seed", range(3))
def test_fgsm_stays_in_ball_and_range(seed):
    ds = unit_box_dataset(30, 4, 3, seed=seed)
    model = tiny_model([4, 8, 3], seed=seed)
    x_adv = fgsm(model, ds.features, ds.labels, 0.1)
    assert np.all(np.abs(x_adv - ds.features) <= 0.1 + 1e-12)
    assert x_adv.min() >= 0.0 and x_adv.max() <= 1.0


def test_fgsm_zero_radius_is_copy():
    ds = random_dataset(10, 3, 2, seed=0)
    model = tiny_model([3, 6, 2], seed=0)
    x_adv = fgsm(model, ds.features, ds.labels, 0.0)
    np.testing.assert_array_equal(x_adv, ds.features)
    assert x_adv is not ds.features
    with pytest.raises(InputError):
        fgsm(model, ds.features, ds.labels, -0.5)


def test_fgsm_moves_along_sign_of_gradient():
    # unclipped single step must sit exactly at x + r * sign(grad)
    ds = random_dataset(8, 3, 2, seed=2)
    model = tiny_model([3, 5, 2], seed=2)
    x_adv = fgsm(model, ds.features, ds.labels, 0.03, clip_range=None)
    steps = np.abs(x_adv - ds.features)
    moved = steps > 0  # sign(grad) = 0 leaves a coordinate in place
    assert np.all(np.isclose(steps[moved], 0.03))


@pytest.mark.parametrize("seed", range(3))
def test_pgd_one_step_equals_fgsm_bitwise(seed):
    ds = random_dataset(25, 4, 3, seed=seed)
    model = tiny_model([4, 8, 3], seed=seed)
    cfg = AttackConfig(radius=0.1, steps=1, step_size=0.1, random_start=False)
    a = pgd(model, ds.features, ds.labels, cfg, Prng(seed))
    b = fgsm(model, ds.features, ds.labels, 0.1)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", range(3))
def test_pgd_ball_and_range(seed):
    ds = unit_box_dataset(30, 5, 2, seed=seed)
    model = tiny_model([5, 10, 2], seed=seed)
    cfg = AttackConfig(radius=0.15, steps=8)
    x_adv = pgd(model, ds.features, ds.labels, cfg, Prng(seed + 9))
    assert np.all(np.abs(x_adv - ds.features) <= 0.15 + 1e-12)
    assert x_adv.min() >= 0.0 and x_adv.max() <= 1.0


def test_pgd_zero_radius_is_copy():
    ds = random_dataset(10, 3, 2, seed=1)
    model = tiny_model([3, 6, 2], seed=1)
    cfg = AttackConfig(radius=0.0)
    np.testing.assert_array_equal(pgd(model, ds.features, ds.labels, cfg, Prng(0)),
                                  ds.features)


def test_pgd_hurts_more_than_fgsm_on_trained_model():
    ds = make_two_moons(300, 0.1, Prng(4))
    model = tiny_model([2, 16, 16, 2], seed=4)
    train_deterministic(model, ds, TrainConfig(SgdConfig(0.1, 0.9, 0.0), epochs=40), Prng(5))
    radius = 0.25
    x_f = fgsm(model, ds.features, ds.labels, radius, clip_range=None)
    cfg = AttackConfig(radius=radius, steps=20, random_start=False, clip_range=None)
    x_p = pgd(model, ds.features, ds.labels, cfg, Prng(6))

    def acc_on(x):
        logits, _ = forward(model, x)
        return float(np.mean(logits.argmax(axis=1) == ds.labels))

    assert acc_on(ds.features) > 0.95
    assert acc_on(x_p) <= acc_on(x_f) + 0.01


def test_adversarial_train_zero_radius_matches_plain():
    ds = random_dataset(60, 3, 2, seed=3)
    cfg = TrainConfig(SgdConfig(0.1, 0.9, 0.0), epochs=5, batch_size=32)
    plain = tiny_model([3, 8, 2], seed=3)
    hard = plain.copy()
    train_deterministic(plain, ds, cfg, Prng(11))
    adversarial_train(hard, ds, cfg, AttackConfig(radius=0.0), Prng(11))
    for a, b in zip(plain.layers, hard.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)


def test_attack_eval_point_and_variational_targets():
    ds = make_two_moons(200, 0.1, Prng(8))
    model = tiny_model([2, 16, 2], seed=8)
    train_deterministic(model, ds, TrainConfig(SgdConfig(0.1, 0.9, 0.0), epochs=30), Prng(9))
    clean = attack_eval(model, ds, AttackConfig(radius=0.0), Prng(10))
    assert clean == pytest.approx(accuracy(model, ds))
    hit = attack_eval(model, ds, AttackConfig(radius=0.3, steps=10), Prng(10))
    assert hit <= clean
    stf = StfModel(model.copy(), init_variational(model.layers[0].weight.shape, Prng(12)))
    stf_clean = attack_eval(stf, ds, AttackConfig(radius=0.0), Prng(13), mc_samples=8)
    assert 0.0 <= stf_clean <= 1.0


def test_mi_curve_perfect_separation():
    rep = mi_curve(np.array([0.9, 0.95, 0.99]), np.array([0.1, 0.2, 0.3]))
    assert rep.accuracy_optim == pytest.approx(1.0)
    assert 0.3 < rep.threshold_optim <= 0.9


def test_mi_curve_identical_confidences_is_chance():
    c = np.linspace(0.2, 0.9, 50)
    rep = mi_curve(c, c.copy())
    assert rep.accuracy_optim == pytest.approx(0.5)


def test_mi_curve_hand_case():
    # train {0.8, 0.6}, test {0.7, 0.1}: z = 0.6 keeps both train rows
    # (c >= z) and rejects only 0.1 -> (1 + 0.5)/2 = 0.75
    rep = mi_curve(np.array([0.8, 0.6]), np.array([0.7, 0.1]))
    assert rep.accuracy_optim == pytest.approx(0.75)
    assert rep.threshold_optim == pytest.approx(0.6)


def test_mi_curve_never_below_half():
    # adversarial ordering: test confidences higher than train
    rep = mi_curve(np.array([0.1, 0.2]), np.array([0.8, 0.9]))
    assert rep.accuracy_optim >= 0.5
    with pytest.raises(InputError):
        mi_curve(np.array([]), np.array([0.5]))


def test_mi_curve_includes_degenerate_thresholds():
    rep = mi_curve(np.array([0.5]), np.array([0.5]))
    assert 0.0 in rep.thresholds
    assert max(rep.thresholds) > 1.0
    assert rep.accuracies[0] == pytest.approx(0.5)
    assert rep.accuracies[-1] == pytest.approx(0.5)


def test_mi_attack_on_overfit_vs_fresh_split():
    # tiny train split memorized by a long run separates from held-out data
    full = make_two_moons(400, 0.3, Prng(30))
    from stfbnn.data import split_train_test
    train, test = split_train_test(full, 120, Prng(31))
    model = tiny_model([2, 32, 32, 2], seed=30)
    train_deterministic(model, train,
                        TrainConfig(SgdConfig(0.1, 0.9, 0.0), epochs=220), Prng(32))
    rep = mi_attack(model, train, test, mc_samples=1, prng=Prng(33))
    assert rep.accuracy_optim > 0.5
    assert rep.accuracy_optim == pytest.approx(
        max(rep.accuracies), abs=0.0)


def test_mi_report_json(tmp_path):
    rep = mi_curve(np.array([0.9, 0.8]), np.array([0.2, 0.3]))
    path = str(tmp_path / "mi.json")
    rep.to_json(path, extra={"target": "baseline"})
    import json
    blob = json.loads(open(path).read())
    assert blob["kind"] == "membership_inference"
    assert blob["target"] == "baseline"
    assert blob["accuracy_optim"] == rep.accuracy_optim
