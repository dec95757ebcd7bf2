import numpy as np
import pytest

from stfbnn.bayes import ElboConfig, StfModel, VariationalLayer, init_variational, stf_train
from stfbnn.data import make_two_moons
from stfbnn.errors import InputError, RegionError, UsageError
from stfbnn.nn import (
    DenseLayer,
    MlpModel,
    SgdConfig,
    TrainConfig,
    forward,
    he_init,
    to_binary_logit,
    train_deterministic,
)
from stfbnn.rng import Prng
from stfbnn.uncertainty import (
    PredictiveSummary,
    accuracy_at_threshold,
    asymptotic_bound,
    closed_form_z,
    ece,
    mc_predict,
    point_predict,
    probit_logit,
    scale_sweep,
)

from conftest import tiny_model


def summary_from(probs):
    probs = np.asarray(probs, dtype=np.float64)
    return PredictiveSummary(
        mean_probs=probs,
        confidence=probs.max(axis=1),
        predicted=probs.argmax(axis=1),
        mc_samples=0,
    )


def test_ece_hand_case_two_bins():
    # two examples: conf 0.6 (right) and 0.9 (wrong), 2 bins
    # bin 2 holds both: acc 0.5, conf 0.75 -> ece = |0.5 - 0.75| = 0.25
    s = summary_from([[0.4, 0.6], [0.9, 0.1]])
    labels = np.array([1, 1])
    rep = ece(s, labels, bins=2)
    assert rep.ece == pytest.approx(0.25, rel=1e-12)
    assert rep.counts == [0, 2]


def test_ece_perfectly_calibrated_zero():
    # confidence 1.0 and always right
    s = summary_from([[1.0, 0.0], [0.0, 1.0]])
    labels = np.array([0, 1])
    assert ece(s, labels, bins=10).ece == pytest.approx(0.0, abs=1e-12)


def test_ece_bin_edges_left_open():
    # conf exactly 0.5 lands in bin ceil(0.5*2)=1, not bin 2
    s = summary_from([[0.5, 0.5]])
    labels = np.array([0])
    rep = ece(s, labels, bins=2)
    assert rep.counts == [1, 0]


def test_ece_normalization_modes():
    s = summary_from([[0.4, 0.6], [0.9, 0.1], [0.55, 0.45]])
    labels = np.array([1, 0, 0])
    by_n = ece(s, labels, bins=5)
    by_m = ece(s, labels, bins=5, normalize_by_bins=True)
    assert by_n.normalization == "N"
    assert by_m.normalization == "M"
    # hand check: bin 3 holds conf .6 and .55 (acc 1, conf .575), bin 5 holds .9 (acc 1, conf .9)
    expect_n = (2 / 3) * abs(1.0 - 0.575) + (1 / 3) * abs(1.0 - 0.9)
    expect_m = (2 / 5) * abs(1.0 - 0.575) + (1 / 5) * abs(1.0 - 0.9)
    assert by_n.ece == pytest.approx(expect_n, rel=1e-12)
    assert by_m.ece == pytest.approx(expect_m, rel=1e-12)


def test_ece_csv(tmp_path):
    s = summary_from([[0.3, 0.7], [0.8, 0.2]])
    rep = ece(s, np.array([1, 0]), bins=4)
    path = str(tmp_path / "e.csv")
    rep.to_csv(path)
    lines = open(path).read().strip().splitlines()
    assert len(lines) == 5  # header + 4 bins


def test_mc_predict_averages_probabilities(moons_trained):
    stf = StfModel(moons_trained.copy(),
                   init_variational(moons_trained.layers[0].weight.shape, Prng(0)),
                   bayes_index=1)
    x = Prng(1).gaussian((6, 2))
    s = mc_predict(stf, x, 16, Prng(2))
    assert s.mean_probs.shape == (6, 2)
    np.testing.assert_allclose(s.mean_probs.sum(axis=1), 1.0, atol=1e-12)
    assert s.mc_samples == 16
    np.testing.assert_array_equal(s.predicted, s.mean_probs.argmax(axis=1))


def test_mc_predict_deterministic_given_prng(moons_trained):
    stf = StfModel(moons_trained.copy(),
                   init_variational(moons_trained.layers[0].weight.shape, Prng(0)),
                   bayes_index=1)
    x = Prng(1).gaussian((4, 2))
    a = mc_predict(stf, x, 8, Prng(9))
    b = mc_predict(stf, x, 8, Prng(9))
    np.testing.assert_array_equal(a.mean_probs, b.mean_probs)


def test_point_predict_matches_forward(moons_trained):
    x = Prng(3).gaussian((5, 2))
    s = point_predict(moons_trained, x)
    logits, _ = forward(moons_trained, x)
    np.testing.assert_array_equal(s.predicted, logits.argmax(axis=1))
    assert s.mc_samples == 0


def test_accuracy_at_threshold_hand_case():
    s = summary_from([[0.9, 0.1], [0.6, 0.4], [0.2, 0.8]])
    labels = np.array([0, 1, 1])
    lo, hi = accuracy_at_threshold(s, labels, [0.5, 0.7])
    assert lo.coverage == pytest.approx(1.0)
    assert lo.accuracy == pytest.approx(2 / 3)
    # 0.7 keeps conf .9 (right) and .8 (right); the .6 wrong one drops
    assert hi.coverage == pytest.approx(2 / 3)
    assert hi.accuracy == pytest.approx(1.0)


def test_accuracy_at_threshold_zero_coverage():
    s = summary_from([[0.6, 0.4]])
    (pt,) = accuracy_at_threshold(s, np.array([0]), [0.99])
    assert pt.coverage == 0.0
    assert pt.accuracy is None
    with pytest.raises(InputError):
        accuracy_at_threshold(s, np.array([0]), [1.5])


def binary_stf(seed=0):
    """Small trained binary moons STF, head collapsed to one log-odds output."""
    ds = make_two_moons(300, 0.15, Prng(seed))
    model = he_init([2, 12, 8, 2], Prng(seed).spawn(1))
    model, _ = train_deterministic(
        model, ds, TrainConfig(SgdConfig(0.1, 0.9, 5e-4), epochs=30), Prng(seed).spawn(2))
    stf, _ = stf_train(model, 1, ds,
                       ElboConfig(SgdConfig(0.05, 0.9, 5e-4), epochs=10), Prng(seed).spawn(3))
    # the variational layer sits below the head, so it carries over unchanged
    return StfModel(to_binary_logit(stf.template), stf.bayes, stf.bayes_index), ds


def test_probit_logit_shapes():
    stf, ds = binary_stf()
    z, conf = probit_logit(stf, ds.features[0])
    assert np.isscalar(z) or np.ndim(z) == 0
    zs, confs = probit_logit(stf, ds.features[:7])
    assert zs.shape == (7,)
    assert np.all((confs > 0) & (confs < 1))


@pytest.mark.parametrize("seed", range(2))
def test_probit_close_to_mc(seed):
    stf, ds = binary_stf(seed)
    x = ds.features[seed * 3 + 1]
    z, conf = probit_logit(stf, x)
    draws = []
    prng = Prng(seed + 40)
    for _ in range(4000):
        sampled, _ = stf.sampled_model(prng)
        logit, _ = forward(sampled, x[None, :])
        draws.append(1.0 / (1.0 + np.exp(-logit[0, 0])))
    assert abs(conf - np.mean(draws)) < 0.03


def test_probit_requires_scalar_output(moons_trained):
    stf = StfModel(moons_trained.copy(),
                   init_variational(moons_trained.layers[0].weight.shape, Prng(0)),
                   bayes_index=1)
    with pytest.raises(UsageError):
        probit_logit(stf, np.zeros(2))


def test_asymptotic_bound_consistency():
    stf, ds = binary_stf()
    x = ds.features[3]
    bound = asymptotic_bound(stf, x)
    # assembled-matrix route must agree with the closed form to tight tolerance
    assert bound.s_min_uj == pytest.approx(np.linalg.norm(bound.u), abs=1e-9)
    assert 0.5 <= bound.bound_confidence <= 1.0
    # tail confidences along the ray never exceed the bound
    rows = scale_sweep(stf, ds.features[3:4], [10.0 ** k for k in range(7)])
    for _, _, conf, cap in rows:
        assert cap == pytest.approx(bound.bound_confidence)
        assert conf <= cap + 1e-6


def test_closed_form_z_matches_probit_along_ray():
    stf, ds = binary_stf()
    x = ds.features[5]
    bound = asymptotic_bound(stf, x)
    for delta in (bound.region_delta, 4.0 * bound.region_delta):
        direct_z, _ = probit_logit(stf, delta * x)
        closed = closed_form_z(stf, bound, delta)
        assert closed == pytest.approx(direct_z, rel=1e-9, abs=1e-12)


def test_asymptotic_bound_dead_direction():
    # crafted net whose hidden units are all off along +x ray
    w1 = np.array([[-1.0, 0.0], [0.0, -1.0]])
    b1 = np.zeros(2)
    w2 = np.array([[1.0, 1.0]])
    template = MlpModel([
        DenseLayer(w1, b1, "relu"),
        DenseLayer(w2, np.zeros(1), "identity"),
    ])
    bayes = VariationalLayer(mu_w=w1.copy(), rho_w=np.full((2, 2), -2.0),
                             mu_b=b1.copy(), rho_b=np.full(2, -2.0))
    stf = StfModel(template, bayes, bayes_index=1)
    with pytest.raises(RegionError):
        asymptotic_bound(stf, np.array([1.0, 1.0]))


def test_scale_sweep_row_grid():
    stf, ds = binary_stf()
    rows = scale_sweep(stf, ds.features[:3], [1.0, 10.0])
    assert len(rows) == 6
    assert {(i, d) for i, d, _, _ in rows} == {(i, d) for i in range(3) for d in (1.0, 10.0)}
    with pytest.raises(InputError):
        scale_sweep(stf, ds.features[:1], [10.0, 1.0])
