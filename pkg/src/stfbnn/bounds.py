"""PAC-Bayes generalization bound evaluation.

The posterior over the frozen parameters is modeled as a diagonal Gaussian
whose variances come from late SGD iterates (phase 1), and the bound
    R(Q) <= Rhat(Q) + sqrt((Delta + 2 log(1/delta) + 2 log m + 4) / (4m - 2))
is evaluated with Delta = 2 KL(Q1||P1) + tr(Sigma - 2I) - log det Sigma
+ ||Sigma1||_F^2 + ||Sigma2||_F^2, Sigma = diag(Sigma1, Sigma2) with zero
cross-covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes import StfModel, VariationalLayer, kl_gaussian_to_std_normal
from .errors import InputError
from .nn import MlpModel, forward
from .report import write_json
from .rng import Prng

VARIANCE_FLOOR = 1e-12
DEFAULT_DELTA_CONF = 0.05


class IterateRecorder:
    """train_deterministic step hook collecting theta2 iterates in the final
    `window_epochs` epochs, as a running Welford mean/variance per scalar."""

    def __init__(self, window_epochs: int, total_epochs: int, exclude_layer: int | None = 0):
        if window_epochs < 1:
            raise InputError("window must cover at least 1 epoch")
        if window_epochs > total_epochs:
            raise InputError(
                f"window of {window_epochs} epochs exceeds the {total_epochs}-epoch run")
        self.window_epochs = window_epochs
        self.total_epochs = total_epochs
        self.exclude_layer = exclude_layer
        self.count = 0
        self._mean = None
        self._m2 = None

    def _flatten(self, model: MlpModel) -> np.ndarray:
        idx = [i for i in range(model.depth) if i != self.exclude_layer]
        return np.concatenate([p.ravel() for p in model.parameters(idx)])

    def __call__(self, model: MlpModel, epoch: int) -> None:
        if epoch < self.total_epochs - self.window_epochs:
            return
        theta = self._flatten(model)
        if self._mean is None:
            self._mean = np.zeros_like(theta)
            self._m2 = np.zeros_like(theta)
        self.count += 1
        delta = theta - self._mean
        self._mean += delta / self.count
        self._m2 += delta * (theta - self._mean)

    def ingest(self, theta: np.ndarray) -> None:
        """Feed a raw iterate directly (for fixtures and tests)."""
        theta = np.asarray(theta, dtype=np.float64)
        if self._mean is None:
            self._mean = np.zeros_like(theta)
            self._m2 = np.zeros_like(theta)
        self.count += 1
        delta = theta - self._mean
        self._mean += delta / self.count
        self._m2 += delta * (theta - self._mean)


@dataclass
class Sigma2Estimate:
    variances: np.ndarray
    iterates_used: int
    window_epochs: int


def estimate_sigma2(recorder: IterateRecorder) -> Sigma2Estimate:
    """Per-scalar sample variance of the recorded iterates, centered at their
    empirical mean, floored at 1e-12."""
    if recorder.count == 0:
        raise InputError("no iterates recorded; was the hook attached for the window?")
    if recorder.count == 1:
        var = np.zeros_like(recorder._mean)
    else:
        var = recorder._m2 / (recorder.count - 1)
    return Sigma2Estimate(np.maximum(var, VARIANCE_FLOOR), recorder.count,
                          recorder.window_epochs)


@dataclass
class DeltaComponents:
    kl_q1_p1: float
    trace_term: float     # tr(Sigma - 2I)
    logdet_term: float    # log det Sigma
    frob_sq: float        # ||Sigma1||_F^2 + ||Sigma2||_F^2
    delta: float
    dim1: int
    dim2: int


def delta_term(q1: VariationalLayer, s2: Sigma2Estimate) -> DeltaComponents:
    """Delta = 2 KL + tr(Sigma - 2I) - log det Sigma + Frobenius terms,
    over the block-diagonal Sigma = diag(Sigma1, Sigma2)."""
    var1 = np.concatenate([(q1.sigma_w**2).ravel(), (q1.sigma_b**2).ravel()])
    var2 = np.asarray(s2.variances, dtype=np.float64).ravel()
    for name, v in (("Sigma1", var1), ("Sigma2", var2)):
        if np.any(v <= 0):
            raise InputError(f"{name} has nonpositive variances")
    kl = kl_gaussian_to_std_normal(q1)
    trace = float(var1.sum() + var2.sum()) - 2.0 * (len(var1) + len(var2))
    logdet = float(np.log(var1).sum() + np.log(var2).sum())
    frob = float((var1**2).sum() + (var2**2).sum())
    delta = 2.0 * kl + trace - logdet + frob
    return DeltaComponents(kl, trace, logdet, frob, delta, len(var1), len(var2))


def empirical_risk_mc(stf: StfModel, dataset, samples: int, prng: Prng) -> float:
    """Average 0-1 error over posterior draws; theta2 stays at its point value."""
    if samples < 1:
        raise InputError("need at least 1 MC sample")
    errs = []
    for _ in range(samples):
        model, _ = stf.sampled_model(prng)
        logits, _ = forward(model, dataset.features)
        errs.append(float(np.mean(logits.argmax(axis=1) != dataset.labels)))
    return float(np.mean(errs))


@dataclass
class BoundReport:
    kl_q1_p1: float
    trace_term: float
    logdet_term: float
    frob_sq: float
    delta: float
    m: int
    delta_conf: float
    empirical_risk: float
    bound_rhs: float
    test_risk: float | None
    gap: float | None
    holds: bool | None
    vacuous: bool

    def to_json(self, path: str) -> None:
        write_json({"kind": "pac_bayes_bound", **self.__dict__}, path)


def pac_bayes_bound(components: DeltaComponents, m: int, delta_conf: float,
                    r_hat: float, test_risk: float | None = None) -> BoundReport:
    """bound_rhs = r_hat + sqrt((Delta + 2 log(1/delta) + 2 log m + 4)/(4m - 2))."""
    if m < 1:
        raise InputError("m must be >= 1")
    if not 0.0 < delta_conf < 1.0:
        raise InputError("confidence level must lie in (0, 1)")
    radical = (components.delta + 2.0 * np.log(1.0 / delta_conf)
               + 2.0 * np.log(m) + 4.0) / (4.0 * m - 2.0)
    rhs = r_hat + float(np.sqrt(radical))
    gap = None if test_risk is None else test_risk - r_hat
    holds = None if test_risk is None else bool(test_risk <= rhs)
    return BoundReport(
        kl_q1_p1=components.kl_q1_p1,
        trace_term=components.trace_term,
        logdet_term=components.logdet_term,
        frob_sq=components.frob_sq,
        delta=components.delta,
        m=m,
        delta_conf=delta_conf,
        empirical_risk=r_hat,
        bound_rhs=rhs,
        test_risk=test_risk,
        gap=gap,
        holds=holds,
        vacuous=rhs > 1.0,
    )
