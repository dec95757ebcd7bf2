"""Variational Gaussian layer and the two-phase training procedure.

Phase 1 trains a deterministic net (nn.train_deterministic). Phase 2 swaps
one layer for a mean-field Gaussian q(theta1) = N(mu, softplus(rho)^2),
freezes everything else, and fits (mu, rho) by the reparameterization trick:
theta1 = mu + softplus(rho) * eps with eps ~ N(0, I), minimizing summed
cross-entropy plus weighted KL(q || N(0, I)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import batch_iter
from .errors import DimensionError, FormatError, InputError, TrainingError
from .nn import (MlpModel, SgdConfig, SgdState, backward, cross_entropy_dlogits,
                 forward, model_from_dict, model_to_dict, sgd_step,
                 softmax_cross_entropy)
from .report import read_json, write_json
from .rng import Prng

STF_FORMAT = "stf-checkpoint"
STF_VERSION = 1

MU_INIT_STD = 0.1
RHO_INIT_MEAN = -2.25
RHO_INIT_STD = 0.1


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)), overflow-safe."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class VariationalLayer:
    """Mean-field Gaussian over one dense layer's weights and biases.

    sigma = softplus(rho) keeps every standard deviation positive.
    """

    def __init__(self, mu_w, rho_w, mu_b, rho_b):
        self.mu_w = np.array(mu_w, dtype=np.float64)
        self.rho_w = np.array(rho_w, dtype=np.float64)
        self.mu_b = np.array(mu_b, dtype=np.float64)
        self.rho_b = np.array(rho_b, dtype=np.float64)
        if self.mu_w.shape != self.rho_w.shape or self.mu_b.shape != self.rho_b.shape:
            raise DimensionError("mu and rho shapes must match")
        if self.mu_w.ndim != 2 or self.mu_b.ndim != 1:
            raise DimensionError("weight stats must be 2-D, bias stats 1-D")
        if self.mu_w.shape[0] != self.mu_b.shape[0]:
            raise DimensionError("weight rows must equal bias length")

    @property
    def sigma_w(self) -> np.ndarray:
        return softplus(self.rho_w)

    @property
    def sigma_b(self) -> np.ndarray:
        return softplus(self.rho_b)

    @property
    def num_scalars(self) -> int:
        return self.mu_w.size + self.mu_b.size

    def copy(self) -> "VariationalLayer":
        return VariationalLayer(self.mu_w.copy(), self.rho_w.copy(),
                                self.mu_b.copy(), self.rho_b.copy())

    def parameters(self) -> list[np.ndarray]:
        """Optimizer ordering: mu_w, rho_w, mu_b, rho_b."""
        return [self.mu_w, self.rho_w, self.mu_b, self.rho_b]


def init_variational(shape: tuple[int, int], prng: Prng,
                     mu_std: float = MU_INIT_STD,
                     rho_mean: float = RHO_INIT_MEAN,
                     rho_std: float = RHO_INIT_STD) -> VariationalLayer:
    """mu ~ N(0, mu_std^2), rho ~ N(rho_mean, rho_std^2); softplus(-2.25) ~ 0.0998.

    0.1 is read as a standard deviation (configurable here if variance was meant).
    """
    out_dim, in_dim = shape
    return VariationalLayer(
        prng.gaussian((out_dim, in_dim), 0.0, mu_std),
        prng.gaussian((out_dim, in_dim), rho_mean, rho_std),
        prng.gaussian((out_dim,), 0.0, mu_std),
        prng.gaussian((out_dim,), rho_mean, rho_std),
    )


@dataclass
class SampledWeights:
    weight: np.ndarray
    bias: np.ndarray
    eps_weight: np.ndarray
    eps_bias: np.ndarray


def sample_weights(layer: VariationalLayer, prng: Prng) -> SampledWeights:
    """theta1 = mu + softplus(rho) * eps, returning eps for pathwise gradients."""
    eps_w = prng.gaussian(layer.mu_w.shape)
    eps_b = prng.gaussian(layer.mu_b.shape)
    return SampledWeights(
        layer.mu_w + layer.sigma_w * eps_w,
        layer.mu_b + layer.sigma_b * eps_b,
        eps_w,
        eps_b,
    )


def kl_gaussian_to_std_normal(layer: VariationalLayer) -> float:
    """Closed-form KL(q || N(0, I)) summed over every variational scalar:
    sum_j 0.5 * (sigma_j^2 + mu_j^2 - 1 - log sigma_j^2)."""
    total = 0.0
    for mu, sigma in ((layer.mu_w, layer.sigma_w), (layer.mu_b, layer.sigma_b)):
        s2 = sigma**2
        total += 0.5 * float((s2 + mu**2 - 1.0 - np.log(s2)).sum())
    return total


class StfModel:
    """A variational layer spliced into an otherwise frozen pretrained net.

    bayes_index is 1-indexed over the layers; index 1 (the default) is the
    input layer. The frozen template's other layers are theta2 and are never
    written to; predictions run through a private scratch copy.
    """

    def __init__(self, template: MlpModel, bayes: VariationalLayer, bayes_index: int = 1):
        if not 1 <= bayes_index <= template.depth:
            raise InputError(f"bayes_index must be in 1..{template.depth}")
        slot = template.layers[bayes_index - 1]
        if bayes.mu_w.shape != slot.weight.shape:
            raise DimensionError(
                f"variational shape {bayes.mu_w.shape} != layer shape {slot.weight.shape}")
        self.template = template
        self.bayes = bayes
        self.bayes_index = bayes_index
        self._scratch = template.copy()

    @property
    def slot(self) -> int:
        return self.bayes_index - 1

    @property
    def num_classes(self) -> int:
        return self.template.output_dim

    def theta2_bytes(self) -> bytes:
        frozen = [i for i in range(self.template.depth) if i != self.slot]
        return self.template.params_bytes(frozen)

    def _materialize(self, weight: np.ndarray, bias: np.ndarray) -> MlpModel:
        layer = self._scratch.layers[self.slot]
        layer.weight[...] = weight
        layer.bias[...] = bias
        self._scratch.touch()
        return self._scratch

    def sampled_model(self, prng: Prng) -> tuple[MlpModel, SampledWeights]:
        draw = sample_weights(self.bayes, prng)
        return self._materialize(draw.weight, draw.bias), draw

    def mean_model(self) -> MlpModel:
        """The deterministic net at theta1 = mu (used by the probit path)."""
        return self._materialize(self.bayes.mu_w, self.bayes.mu_b)

    def copy(self) -> "StfModel":
        return StfModel(self.template.copy(), self.bayes.copy(), self.bayes_index)


@dataclass
class ElboConfig:
    optimizer: SgdConfig
    epochs: int
    batch_size: int = 128
    kl_weight_mode: str = "per_batch_1_over_B"  # or "unit"
    mc_samples_per_step: int = 1

    def __post_init__(self):
        if self.kl_weight_mode not in ("per_batch_1_over_B", "unit"):
            raise InputError(f"unknown kl_weight_mode {self.kl_weight_mode!r}")
        if self.mc_samples_per_step < 1:
            raise InputError("mc_samples_per_step must be >= 1")
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")

    def kl_weight(self, num_batches: int) -> float:
        return 1.0 / num_batches if self.kl_weight_mode == "per_batch_1_over_B" else 1.0


def _elbo_once(stf: StfModel, xb: np.ndarray, yb: np.ndarray, prng: Prng,
               kl_weight: float, want_grads: bool):
    """One eps draw: summed cross-entropy + weighted KL, with pathwise grads.

    Gradient routing per the chain rule of the reparameterization:
      d/dmu  = g_theta + kl_weight * mu
      d/drho = g_theta * eps * sigmoid(rho) + kl_weight * (sigma - 1/sigma) * sigmoid(rho)
    where g_theta is the cross-entropy gradient at theta1 = mu + sigma*eps.
    """
    model, draw = stf.sampled_model(prng)
    logits, cache = forward(model, xb)
    mean_ce, probs = softmax_cross_entropy(logits, yb)
    nll = mean_ce * len(yb)  # batch sum, matching the summed objective
    kl = kl_gaussian_to_std_normal(stf.bayes)
    loss = nll + kl_weight * kl
    if not want_grads:
        return loss, nll, kl, None
    grads, _ = backward(model, cache, cross_entropy_dlogits(probs, yb, scale=1.0))
    g_w, g_b = grads[stf.slot]
    lay = stf.bayes
    out = []
    for mu, rho, g, eps in ((lay.mu_w, lay.rho_w, g_w, draw.eps_weight),
                            (lay.mu_b, lay.rho_b, g_b, draw.eps_bias)):
        sig = softplus(rho)
        gate = sigmoid(rho)
        dmu = g + kl_weight * mu
        drho = g * eps * gate + kl_weight * (sig - 1.0 / sig) * gate
        out.extend([dmu, drho])
    # reorder to (mu_w, rho_w, mu_b, rho_b) parameter ordering
    return loss, nll, kl, [out[0], out[1], out[2], out[3]]


def elbo_loss(stf: StfModel, xb, yb, prng: Prng, kl_weight: float = 1.0,
              mc_samples: int = 1):
    """Monte Carlo ELBO objective on one batch.

    Returns (loss, parts) with parts = {"nll", "kl"}; loss = nll + kl_weight*kl
    exactly, with nll averaged over the eps draws.
    """
    xb = np.asarray(xb, dtype=np.float64)
    yb = np.asarray(yb, dtype=np.int64)
    nlls = []
    kl = 0.0
    for _ in range(mc_samples):
        _, nll, kl, _ = _elbo_once(stf, xb, yb, prng, kl_weight, want_grads=False)
        nlls.append(nll)
    nll = float(np.mean(nlls))
    return nll + kl_weight * kl, {"nll": nll, "kl": kl}


def elbo_grads(stf: StfModel, xb, yb, prng: Prng, kl_weight: float = 1.0,
               mc_samples: int = 1):
    """Like elbo_loss but also returns pathwise gradients for (mu_w, rho_w,
    mu_b, rho_b), averaged over the eps draws."""
    acc = None
    nll_sum = 0.0
    kl = 0.0
    for _ in range(mc_samples):
        _, nll, kl, grads = _elbo_once(stf, xb, yb, prng, kl_weight, want_grads=True)
        nll_sum += nll
        if acc is None:
            acc = grads
        else:
            for a, g in zip(acc, grads):
                a += g
    if mc_samples > 1:
        for a in acc:
            a /= mc_samples
    nll = nll_sum / mc_samples
    return nll + kl_weight * kl, {"nll": nll, "kl": kl}, acc


def stf_train(pretrained: MlpModel, bayes_layer_index: int, dataset,
              cfg: ElboConfig, prng: Prng):
    """Phase 2: fit the variational layer against frozen pretrained weights.

    Returns (StfModel, curves) with per-epoch mean loss/nll/kl. Weight decay
    from cfg.optimizer applies to the mu arrays only; theta2 stays
    byte-identical throughout.
    """
    if len(dataset) == 0:
        raise InputError("dataset is empty")
    template = pretrained.copy()
    slot_layer = template.layers[bayes_layer_index - 1]
    bayes = init_variational(slot_layer.weight.shape, prng.spawn(0))
    stf = StfModel(template, bayes, bayes_layer_index)
    frozen_before = stf.theta2_bytes()

    num_batches = -(-len(dataset) // cfg.batch_size)
    kl_weight = cfg.kl_weight(num_batches)
    params = bayes.parameters()
    state = SgdState(params)
    decay_mask = [True, False, True, False]  # mu_w, rho_w, mu_b, rho_b
    curves = {"loss": [], "nll": [], "kl": []}
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.optimizer.lr_at(epoch)
        tot_loss = tot_nll = tot_kl = 0.0
        batches = 0
        for xb, yb in batch_iter(dataset, cfg.batch_size, prng):
            loss, parts, grads = elbo_grads(stf, xb, yb, prng, kl_weight,
                                            cfg.mc_samples_per_step)
            if not np.isfinite(loss):
                raise TrainingError(f"ELBO diverged at step {step} (epoch {epoch})", epoch)
            sgd_step(params, grads, state, cfg.optimizer, lr, decay_mask)
            step += 1
            tot_loss += loss
            tot_nll += parts["nll"]
            tot_kl += parts["kl"]
            batches += 1
        curves["loss"].append(tot_loss / batches)
        curves["nll"].append(tot_nll / batches)
        curves["kl"].append(tot_kl / batches)
    assert stf.theta2_bytes() == frozen_before
    return stf, curves


def stf_to_dict(stf: StfModel) -> dict:
    return {
        "format": STF_FORMAT,
        "version": STF_VERSION,
        "bayes_index": stf.bayes_index,
        "template": model_to_dict(stf.template),
        "mu_w": stf.bayes.mu_w.tolist(),
        "rho_w": stf.bayes.rho_w.tolist(),
        "mu_b": stf.bayes.mu_b.tolist(),
        "rho_b": stf.bayes.rho_b.tolist(),
    }


def stf_from_dict(blob: dict) -> StfModel:
    if blob.get("format") != STF_FORMAT:
        raise FormatError(f"not an stf checkpoint: format={blob.get('format')!r}")
    if blob.get("version") != STF_VERSION:
        raise FormatError(f"unsupported stf checkpoint version {blob.get('version')!r}")
    bayes = VariationalLayer(blob["mu_w"], blob["rho_w"], blob["mu_b"], blob["rho_b"])
    return StfModel(model_from_dict(blob["template"]), bayes, blob["bayes_index"])


def save_stf(stf: StfModel, path: str) -> None:
    write_json(stf_to_dict(stf), path)


def load_stf(path: str) -> StfModel:
    return stf_from_dict(read_json(path))
