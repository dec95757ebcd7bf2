import numpy as np
import pytest

from stfbnn.bayes import StfModel, VariationalLayer
from stfbnn.bounds import (
    IterateRecorder,
    Sigma2Estimate,
    delta_term,
    empirical_risk_mc,
    estimate_sigma2,
    pac_bayes_bound,
)
from stfbnn.errors import InputError
from stfbnn.nn import SgdConfig, TrainConfig, accuracy, train_deterministic
from stfbnn.rng import Prng

from conftest import random_dataset, tiny_model

# softplus(x) = 1  <=>  x = log(e - 1)
RHO_UNIT_SIGMA = 0.5413248546129181


def unit_posterior(out_dim, in_dim):
    """Variational layer pinned at the prior: mu = 0, sigma = 1."""
    return VariationalLayer(
        mu_w=np.zeros((out_dim, in_dim)),
        rho_w=np.full((out_dim, in_dim), RHO_UNIT_SIGMA),
        mu_b=np.zeros(out_dim),
        rho_b=np.full(out_dim, RHO_UNIT_SIGMA),
    )


@pytest.mark.parametrize("seed", range(4))
def test_recorder_matches_numpy_variance(seed):
    prng = Prng(seed)
    iterates = prng.gaussian((12, 7)) * 3.0 + 1.5
    rec = IterateRecorder(window_epochs=1, total_epochs=1)
    for row in iterates:
        rec.ingest(row)
    est = estimate_sigma2(rec)
    np.testing.assert_allclose(est.variances, iterates.var(axis=0, ddof=1),
                               rtol=1e-12, atol=1e-15)
    assert est.iterates_used == 12


def test_recorder_floor_on_constant_iterates():
    rec = IterateRecorder(1, 1)
    for _ in range(5):
        rec.ingest(np.array([2.0, -3.0]))
    est = estimate_sigma2(rec)
    np.testing.assert_array_equal(est.variances, [1e-12, 1e-12])


def test_recorder_single_iterate_floors_to_tiny():
    rec = IterateRecorder(1, 1)
    rec.ingest(np.array([4.0]))
    assert estimate_sigma2(rec).variances[0] == 1e-12


def test_recorder_validation():
    with pytest.raises(InputError):
        IterateRecorder(0, 10)
    with pytest.raises(InputError):
        IterateRecorder(11, 10)
    with pytest.raises(InputError):
        estimate_sigma2(IterateRecorder(1, 1))


def test_recorder_windows_last_epochs_only():
    ds = random_dataset(40, 3, 2, seed=1)
    model = tiny_model([3, 6, 2], seed=1)
    rec = IterateRecorder(window_epochs=2, total_epochs=4)
    cfg = TrainConfig(SgdConfig(0.05, 0.0, 0.0), epochs=4, batch_size=16)
    train_deterministic(model, ds, cfg, Prng(2), step_hook=rec)
    # 40/16 -> 3 steps per epoch, recorded for the final 2 epochs only
    assert rec.count == 6
    est = estimate_sigma2(rec)
    # second-layer weights and biases only (first layer excluded by default)
    assert len(est.variances) == 6 * 2 + 2
    assert np.any(est.variances > 1e-12)


def test_delta_zero_at_identity_covariance():
    q1 = unit_posterior(3, 2)
    s2 = Sigma2Estimate(np.ones(5), iterates_used=10, window_epochs=2)
    comp = delta_term(q1, s2)
    assert comp.kl_q1_p1 == 0.0
    assert comp.delta == 0.0
    assert comp.dim1 == 9 and comp.dim2 == 5
    # tr(Sigma - 2I) = -14 and the Frobenius terms give it back exactly
    assert comp.trace_term == -14.0
    assert comp.logdet_term == 0.0
    assert comp.frob_sq == 14.0


def test_delta_rejects_nonpositive_variances():
    q1 = unit_posterior(2, 2)
    with pytest.raises(InputError):
        delta_term(q1, Sigma2Estimate(np.array([1.0, 0.0]), 2, 1))


@pytest.mark.parametrize("seed", range(3))
def test_delta_positive_off_identity(seed):
    # Delta = 2 KL + sum(v - 1 - log v) + sum(v^2 - v) termwise; each piece
    # is nonnegative and vanishes only at mu=0, sigma=1
    prng = Prng(seed)
    q1 = VariationalLayer(
        mu_w=prng.gaussian((2, 3)) * 0.3,
        rho_w=prng.gaussian((2, 3)) - 1.0,
        mu_b=prng.gaussian(2) * 0.3,
        rho_b=prng.gaussian(2) - 1.0,
    )
    s2 = Sigma2Estimate(prng.uniform(4) * 1.5 + 0.25, 8, 2)
    assert delta_term(q1, s2).delta > 0.0


def test_bound_rhs_frozen_value():
    # Delta = 0, delta_conf = e^{-1/2}, m = 1:
    # radical = (0 + 1 + 0 + 4) / 2, rhs = sqrt(2.5)
    comp = delta_term(unit_posterior(2, 2), Sigma2Estimate(np.ones(3), 4, 1))
    rep = pac_bayes_bound(comp, m=1, delta_conf=float(np.exp(-0.5)), r_hat=0.0)
    assert rep.bound_rhs == pytest.approx(1.5811388300841898, rel=1e-15)
    assert rep.vacuous  # rhs > 1 at m = 1
    assert rep.test_risk is None and rep.holds is None and rep.gap is None


def test_bound_rhs_shrinks_with_m():
    comp = delta_term(unit_posterior(2, 2), Sigma2Estimate(np.ones(3), 4, 1))
    rhs = [pac_bayes_bound(comp, m, 0.05, 0.1).bound_rhs
           for m in (10, 100, 10_000, 1_000_000)]
    assert all(a > b for a, b in zip(rhs, rhs[1:]))
    assert rhs[-1] < 0.2  # nonvacuous at large m


def test_bound_holds_flag_and_gap():
    comp = delta_term(unit_posterior(2, 2), Sigma2Estimate(np.ones(3), 4, 1))
    rep = pac_bayes_bound(comp, m=1000, delta_conf=0.05, r_hat=0.10, test_risk=0.12)
    assert rep.holds is True
    assert rep.gap == pytest.approx(0.02)
    worse = pac_bayes_bound(comp, m=1000, delta_conf=0.05, r_hat=0.10, test_risk=0.99)
    assert worse.holds is False


def test_bound_validation():
    comp = delta_term(unit_posterior(2, 2), Sigma2Estimate(np.ones(3), 4, 1))
    with pytest.raises(InputError):
        pac_bayes_bound(comp, m=0, delta_conf=0.05, r_hat=0.1)
    for bad in (0.0, 1.0):
        with pytest.raises(InputError):
            pac_bayes_bound(comp, m=10, delta_conf=bad, r_hat=0.1)


def test_bound_report_json(tmp_path):
    comp = delta_term(unit_posterior(2, 2), Sigma2Estimate(np.ones(3), 4, 1))
    rep = pac_bayes_bound(comp, m=50, delta_conf=0.05, r_hat=0.2, test_risk=0.3)
    path = str(tmp_path / "bound.json")
    rep.to_json(path)
    import json
    blob = json.loads(open(path).read())
    assert blob["kind"] == "pac_bayes_bound"
    assert blob["m"] == 50
    assert blob["holds"] == rep.holds


def test_empirical_risk_collapses_to_point_risk():
    ds = random_dataset(60, 4, 3, seed=5)
    model = tiny_model([4, 8, 3], seed=5)
    cfg = TrainConfig(SgdConfig(0.1, 0.9, 0.0), epochs=20, batch_size=32)
    train_deterministic(model, ds, cfg, Prng(6))
    w = model.layers[0]
    bayes = VariationalLayer(
        mu_w=w.weight.copy(), rho_w=np.full(w.weight.shape, -30.0),
        mu_b=w.bias.copy(), rho_b=np.full(w.bias.shape, -30.0),
    )
    stf = StfModel(model.copy(), bayes, bayes_index=1)
    risk = empirical_risk_mc(stf, ds, samples=4, prng=Prng(7))
    assert risk == pytest.approx(1.0 - accuracy(model, ds), abs=1e-12)
    with pytest.raises(InputError):
        empirical_risk_mc(stf, ds, samples=0, prng=Prng(8))
