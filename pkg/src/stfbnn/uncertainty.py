"""Predictive uncertainty: MC predictions, calibration, and the asymptotic
confidence bound for far-away inputs.

The probit path approximates the posterior-predictive probability of a
binary (scalar-logit) model by tau(z(x)) with
z(x) = f_mu(x) / sqrt(1 + pi/8 * d1' Sigma1 d1), d1 the gradient of the
logit in the variational parameters at their mean. Far from the data the
network is affine on a fixed ReLU region, which caps tau(|z|) by a value
independent of the input scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes import StfModel, sigmoid
from .errors import DimensionError, InputError, RegionError, UsageError
from .nn import MlpModel, forward, softmax
from .report import write_csv
from .rng import Prng

DEFAULT_ECE_BINS = 15
REGION_STABLE_DOUBLINGS = 3
REGION_MAX_DELTA = 2.0**64


@dataclass
class PredictiveSummary:
    mean_probs: np.ndarray   # [batch x k]
    confidence: np.ndarray   # row max
    predicted: np.ndarray    # row argmax
    mc_samples: int


def _summarize(mean_probs: np.ndarray, mc_samples: int) -> PredictiveSummary:
    return PredictiveSummary(
        mean_probs=mean_probs,
        confidence=mean_probs.max(axis=1),
        predicted=mean_probs.argmax(axis=1).astype(np.int64),
        mc_samples=mc_samples,
    )


def mc_predict(stf: StfModel, x, samples: int, prng: Prng) -> PredictiveSummary:
    """Average the softmax over `samples` fresh posterior draws."""
    if samples < 1:
        raise InputError("need at least 1 MC sample")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    acc = np.zeros((len(x), stf.num_classes))
    for _ in range(samples):
        model, _ = stf.sampled_model(prng)
        logits, _ = forward(model, x)
        acc += softmax(logits)
    return _summarize(acc / samples, samples)


def point_predict(model: MlpModel, x) -> PredictiveSummary:
    """Deterministic-model summary, for baseline comparisons (mc_samples=0)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    logits, _ = forward(model, x)
    return _summarize(softmax(logits), 0)


@dataclass
class EceReport:
    bins: int
    counts: list[int]
    accs: list[float]
    confs: list[float]
    ece: float
    normalization: str  # "N" (count) or "M" (paper-literal bin count)

    def to_csv(self, path: str) -> None:
        rows = [(m + 1, self.counts[m], repr(self.accs[m]), repr(self.confs[m]))
                for m in range(self.bins)]
        write_csv(path, ["bin", "count", "acc", "conf"], rows)


def ece(summary: PredictiveSummary, labels, bins: int = DEFAULT_ECE_BINS,
        normalize_by_bins: bool = False) -> EceReport:
    """Expected calibration error over bins I_m = ((m-1)/M, m/M].

    Default weights each bin by |B_m|/N. `normalize_by_bins` switches to the
    literal |B_m|/M weighting (kept for comparison; N is the standard form).
    """
    if bins < 1:
        raise InputError("need at least 1 bin")
    labels = np.asarray(labels, dtype=np.int64)
    conf = summary.confidence
    if len(labels) != len(conf):
        raise DimensionError("one label per prediction required")
    if np.any(conf < 0) or np.any(conf > 1):
        raise InputError("confidences must lie in [0, 1]")
    correct = (summary.predicted == labels).astype(np.float64)
    # conf in ((m-1)/M, m/M] maps to bin ceil(conf*M); clip guards conf == 0
    idx = np.clip(np.ceil(conf * bins).astype(np.int64), 1, bins) - 1
    counts, accs, confs = [], [], []
    total = 0.0
    n = len(labels)
    for m in range(bins):
        members = idx == m
        c = int(members.sum())
        counts.append(c)
        if c:
            a = float(correct[members].mean())
            q = float(conf[members].mean())
            denom = bins if normalize_by_bins else n
            total += (c / denom) * abs(a - q)
        else:
            a = q = 0.0
        accs.append(a)
        confs.append(q)
    return EceReport(bins, counts, accs, confs, float(total),
                     "M" if normalize_by_bins else "N")


@dataclass
class ThresholdPoint:
    threshold: float
    coverage: float
    accuracy: float | None


def accuracy_at_threshold(summary: PredictiveSummary, labels,
                          thresholds) -> list[ThresholdPoint]:
    """Refuse predictions below each confidence threshold; accuracy over the
    retained examples (None at zero coverage)."""
    labels = np.asarray(labels, dtype=np.int64)
    out = []
    for t in thresholds:
        if not 0.0 <= t <= 1.0:
            raise InputError(f"threshold {t} outside [0, 1]")
        keep = summary.confidence >= t
        cov = float(keep.mean())
        acc = float((summary.predicted[keep] == labels[keep]).mean()) if keep.any() else None
        out.append(ThresholdPoint(float(t), cov, acc))
    return out


def _require_scalar_output(stf: StfModel) -> None:
    if stf.template.output_dim != 1:
        raise UsageError("probit path needs a scalar-logit (binary) model")


def _mean_logit_and_grad(stf: StfModel, x_row: np.ndarray):
    """Scalar logit at theta1 = mu and its gradient in the variational layer."""
    from .nn import backward  # local to keep module import graph flat

    model = stf.mean_model()
    logits, cache = forward(model, x_row[None, :])
    grads, _ = backward(model, cache, np.ones((1, 1)))
    g_w, g_b = grads[stf.slot]
    return float(logits[0, 0]), g_w, g_b


def probit_logit(stf: StfModel, x):
    """z(x) and tau(z(x)) for a scalar-logit model.

    The variance term sums diagonal Sigma1 over every variational scalar,
    biases included.
    """
    _require_scalar_output(stf)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    var_w = stf.bayes.sigma_w**2
    var_b = stf.bayes.sigma_b**2
    zs = np.empty(len(rows))
    for i, row in enumerate(rows):
        f, g_w, g_b = _mean_logit_and_grad(stf, row)
        v = float((var_w * g_w**2).sum() + (var_b * g_b**2).sum())
        zs[i] = f / np.sqrt(1.0 + (np.pi / 8.0) * v)
    taus = sigmoid(zs)
    if single:
        return float(zs[0]), float(taus[0])
    return zs, taus


def _hidden_pattern(model: MlpModel, x_row: np.ndarray) -> np.ndarray:
    _, cache = forward(model, x_row[None, :])
    masks = [cache.pre[i][0] > 0.0 for i in range(model.depth)
             if model.layers[i].activation == "relu"]
    return np.concatenate(masks)


@dataclass
class AsymptoticBound:
    x: np.ndarray
    u: np.ndarray
    w_norm: float
    lambda_min_sigma1: float
    s_min_uj: float
    bound_logit: float
    bound_confidence: float
    region_pattern: np.ndarray
    region_delta: float
    c_offset: float  # downstream bias contribution: f = u.(W1 x + b1) + c


def _affine_decomposition(model: MlpModel, slot: int, pattern_masks: list[np.ndarray]):
    """On a fixed region, logit = u . (W_slot x_in + b_slot) + c where x_in is
    the input to the variational layer; returns (u, c).

    With the variational layer first (the supported case for bounds), x_in is
    the raw input."""
    r = model.layers[slot].out_dim
    coeff = np.eye(r)
    offset = np.zeros(r)
    mask_iter = iter(pattern_masks)
    if model.layers[slot].activation == "relu":
        gate = next(mask_iter).astype(np.float64)
        coeff = np.diag(gate)
    for i in range(slot + 1, model.depth):
        layer = model.layers[i]
        coeff = layer.weight @ coeff
        offset = layer.weight @ offset + layer.bias
        if layer.activation == "relu":
            gate = next(mask_iter).astype(np.float64)
            coeff = gate[:, None] * coeff
            offset = gate * offset
    # scalar output: coeff is [1 x r], offset is [1]
    return coeff[0], float(offset[0])


def asymptotic_bound(stf: StfModel, x) -> AsymptoticBound:
    """Theorem-style cap on tau(|z(delta x)|) as delta grows.

    Scales delta upward by doubling until the hidden ReLU pattern is
    invariant for three consecutive doublings, then evaluates both the
    reduced bound ||w||_F / sqrt(pi/8 * lambda_min(Sigma1_weights)) and the
    general form ||u|| ||w|| / (s_min * sqrt(...)) with s_min taken from the
    explicitly assembled gradient map; the two must agree to 1e-9.
    """
    _require_scalar_output(stf)
    if stf.bayes_index != 1:
        raise UsageError("asymptotic bound assumes the variational layer is first")
    x = np.asarray(x, dtype=np.float64).ravel()
    if not np.any(x):
        raise InputError("direction must be nonzero")
    model = stf.mean_model()
    delta = 1.0
    pattern = _hidden_pattern(model, delta * x)
    stable = 0
    while stable < REGION_STABLE_DOUBLINGS:
        if delta > REGION_MAX_DELTA:
            raise RegionError(
                f"activation pattern failed to stabilize by delta=2^64 for direction {x.tolist()}")
        nxt = _hidden_pattern(model, 2.0 * delta * x)
        stable = stable + 1 if np.array_equal(pattern, nxt) else 0
        pattern = nxt
        delta *= 2.0

    # split the flat pattern back into per-layer masks
    masks = []
    pos = 0
    for layer in model.layers:
        if layer.activation == "relu":
            masks.append(pattern[pos:pos + layer.out_dim])
            pos += layer.out_dim
    u, c = _affine_decomposition(model, stf.slot, masks)

    w = stf.bayes.mu_w
    var_w = stf.bayes.sigma_w**2
    lam_min = float(var_w.min())
    u_norm = float(np.linalg.norm(u))
    w_norm = float(np.linalg.norm(w))
    if u_norm == 0.0:
        # the whole frozen path is dead in this region: the logit is constant
        # and the general bound degenerates; report the trivial cap
        raise RegionError(f"frozen path is identically zero along direction {x.tolist()}")
    # gradient map A: x -> vec(u x^T), assembled row-major; A[i*n+j, j] = u_i
    n = len(x)
    a = np.zeros((len(u) * n, n))
    for i, ui in enumerate(u):
        a[i * n:(i + 1) * n, :] = ui * np.eye(n)
    s_min = float(np.linalg.svd(a, compute_uv=False).min())
    scale = np.sqrt(np.pi / 8.0 * lam_min)
    general = u_norm * w_norm / (s_min * scale)
    reduced = w_norm / scale
    if abs(general - reduced) > 1e-9 * max(1.0, abs(reduced)):
        raise RegionError(
            f"bound forms disagree: general {general!r} vs reduced {reduced!r}")
    return AsymptoticBound(
        x=x, u=u, w_norm=w_norm, lambda_min_sigma1=lam_min, s_min_uj=s_min,
        bound_logit=reduced, bound_confidence=float(sigmoid(np.array([reduced]))[0]),
        region_pattern=pattern, region_delta=delta, c_offset=c,
    )


def closed_form_z(stf: StfModel, bound: AsymptoticBound, delta: float) -> float:
    """Exact rational form of z(delta x) inside the stabilized region:
    (u.w x + (u.b + c)/delta) / sqrt(1/delta^2 + pi/8 * Omega' Sigma1 Omega),
    Omega = vec(u x^T) concat u/delta."""
    u, x = bound.u, bound.x
    w, b = stf.bayes.mu_w, stf.bayes.mu_b
    var_w = stf.bayes.sigma_w**2
    var_b = stf.bayes.sigma_b**2
    uwx = float(u @ (w @ x))
    num = uwx + (float(u @ b) + bound.c_offset) / delta
    omega_w = np.outer(u, x)
    quad = float((var_w * omega_w**2).sum() + (var_b * (u / delta)**2).sum())
    return num / np.sqrt(1.0 / delta**2 + (np.pi / 8.0) * quad)


def scale_sweep(stf: StfModel, directions: np.ndarray, deltas) -> list[tuple]:
    """tau(|z(delta x)|) per (direction, delta) with the per-direction bound.

    Returns rows (direction_id, delta, confidence, bound_confidence); write
    with scale_sweep_csv.
    """
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas) or deltas != sorted(deltas):
        raise InputError("deltas must be positive and increasing")
    directions = np.asarray(directions, dtype=np.float64)
    rows = []
    for di, x in enumerate(directions):
        cap = asymptotic_bound(stf, x)
        for d in deltas:
            z, _ = probit_logit(stf, d * x)
            conf = float(sigmoid(np.array([abs(z)]))[0])
            rows.append((di, d, conf, cap.bound_confidence))
    return rows


def scale_sweep_csv(rows: list[tuple], path: str) -> None:
    write_csv(path, ["direction_id", "delta", "confidence", "bound"],
              [(i, repr(d), repr(c), repr(b)) for i, d, c, b in rows])
