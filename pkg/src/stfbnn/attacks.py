"""Adversarial attacks, adversarial training, and membership inference.

FGSM takes one signed-gradient step of radius xi; PGD iterates smaller steps
with projection back onto the L-infinity ball and the feature range.
Membership inference thresholds the true-class confidence and reports the
balanced accuracy over train/test at the best threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes import StfModel
from .errors import InputError
from .nn import (MlpModel, TrainConfig, backward, cross_entropy_dlogits,
                 forward, softmax_cross_entropy, train_deterministic)
from .report import write_json
from .rng import Prng
from .uncertainty import mc_predict, point_predict

DEFAULT_PGD_STEPS = 10
DEFAULT_CLIP = (0.0, 1.0)


@dataclass
class AttackConfig:
    radius: float                      # xi, L-infinity, feature units
    steps: int = DEFAULT_PGD_STEPS
    step_size: float | None = None     # default 2.5 * xi / steps
    random_start: bool = True
    clip_range: tuple[float, float] | None = DEFAULT_CLIP

    def __post_init__(self):
        if self.radius < 0:
            raise InputError("radius must be >= 0")
        if self.steps < 1:
            raise InputError("steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise InputError("step_size must be > 0")

    def resolved_step(self) -> float:
        return self.step_size if self.step_size is not None else 2.5 * self.radius / self.steps


def _loss_input_grad(model: MlpModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    logits, cache = forward(model, x)
    _, probs = softmax_cross_entropy(logits, y)
    _, dx = backward(model, cache, cross_entropy_dlogits(probs, y))
    return dx


def _clip(x: np.ndarray, clip_range) -> np.ndarray:
    if clip_range is None:
        return x
    return np.clip(x, clip_range[0], clip_range[1])


def _ascend(model: MlpModel, x_cur: np.ndarray, x_ref: np.ndarray, y: np.ndarray,
            step: float, radius: float, clip_range) -> np.ndarray:
    """One signed-gradient ascent step, then ball projection and range clip.

    FGSM and each PGD iteration share this exact arithmetic, so PGD with
    steps=1, no random start, and step_size=radius is bitwise FGSM.
    """
    grad = _loss_input_grad(model, x_cur, y)
    x_new = x_cur + step * np.sign(grad)
    x_new = np.clip(x_new, x_ref - radius, x_ref + radius)
    return _clip(x_new, clip_range)


def fgsm(model: MlpModel, x, y, radius: float,
         clip_range=DEFAULT_CLIP) -> np.ndarray:
    """x_adv = clip(x + radius * sign(dL/dx))."""
    if radius < 0:
        raise InputError("radius must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if radius == 0.0:
        return x.copy()
    return _ascend(model, x, x, y, radius, radius, clip_range)


def pgd(model: MlpModel, x, y, cfg: AttackConfig, prng: Prng) -> np.ndarray:
    """Iterative signed-gradient ascent projected onto the radius ball."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if cfg.radius == 0.0:
        return x.copy()
    cur = x
    if cfg.random_start:
        cur = x + cfg.radius * (2.0 * prng.uniform(x.shape) - 1.0)
        cur = _clip(cur, cfg.clip_range)
    step = cfg.resolved_step()
    for _ in range(cfg.steps):
        cur = _ascend(model, cur, x, y, step, cfg.radius, cfg.clip_range)
    return cur


def adversarial_train(model: MlpModel, dataset, cfg: TrainConfig,
                      attack: AttackConfig, prng: Prng):
    """Minimax training: every batch is replaced by its PGD perturbation.

    radius 0 short-circuits to plain training (bitwise identical weights for
    the same seed).
    """
    if attack.radius == 0.0:
        return train_deterministic(model, dataset, cfg, prng)
    atk_prng = prng.spawn(0xAD5)

    def craft(m, xb, yb):
        return pgd(m, xb, yb, attack, atk_prng)

    return train_deterministic(model, dataset, cfg, prng, batch_hook=craft)


def _attack_surface(target) -> MlpModel:
    """Deterministic net to differentiate through: the model itself, or the
    posterior-mean net of a variational model (deterministic crafts)."""
    return target.mean_model() if isinstance(target, StfModel) else target


def attack_eval(target, dataset, attack: AttackConfig, prng: Prng,
                mc_samples: int = 1) -> float:
    """Accuracy on adversarial examples crafted against `target`."""
    surface = _attack_surface(target)
    if attack.radius == 0.0:
        x_adv = dataset.features
    else:
        x_adv = pgd(surface, dataset.features, dataset.labels, attack, prng)
    if isinstance(target, StfModel):
        summary = mc_predict(target, x_adv, mc_samples, prng)
    else:
        summary = point_predict(target, x_adv)
    return float(np.mean(summary.predicted == dataset.labels))


def _true_class_confidence(target, dataset, mc_samples: int, prng: Prng,
                           use_max: bool) -> np.ndarray:
    if isinstance(target, StfModel):
        summary = mc_predict(target, dataset.features, mc_samples, prng)
    else:
        summary = point_predict(target, dataset.features)
    if use_max:
        return summary.confidence
    return summary.mean_probs[np.arange(len(dataset)), dataset.labels]


@dataclass
class MiReport:
    thresholds: list[float]
    accuracies: list[float]
    threshold_optim: float
    accuracy_optim: float

    def to_json(self, path: str, extra: dict | None = None) -> None:
        write_json({"kind": "membership_inference", **(extra or {}),
                    **self.__dict__}, path)


def mi_curve(train_conf: np.ndarray, test_conf: np.ndarray) -> MiReport:
    """Balanced accuracy Acc(z) = (P_train[c >= z] + P_test[c < z]) / 2 swept
    over all observed confidences plus the degenerate thresholds 0 and 1+eps
    (each scoring exactly 0.5), so the optimum is never below 0.5."""
    train_conf = np.sort(np.asarray(train_conf, dtype=np.float64))
    test_conf = np.sort(np.asarray(test_conf, dtype=np.float64))
    if len(train_conf) == 0 or len(test_conf) == 0:
        raise InputError("both splits must be nonempty")
    grid = np.unique(np.concatenate([train_conf, test_conf, [0.0, 1.0 + 1e-9]]))
    # P_train[c >= z] and P_test[c < z] via rank lookups in the sorted splits
    p_train = 1.0 - np.searchsorted(train_conf, grid, side="left") / len(train_conf)
    p_test = np.searchsorted(test_conf, grid, side="left") / len(test_conf)
    accs = 0.5 * (p_train + p_test)
    best = int(np.argmax(accs))
    return MiReport(grid.tolist(), accs.tolist(), float(grid[best]), float(accs[best]))


def mi_attack(target, train_split, test_split, mc_samples: int, prng: Prng,
              use_max_confidence: bool = False) -> MiReport:
    """Threshold attack on the true-class confidence (or row max behind the
    flag), balanced over the two splits."""
    tr = _true_class_confidence(target, train_split, mc_samples, prng, use_max_confidence)
    te = _true_class_confidence(target, test_split, mc_samples, prng, use_max_confidence)
    return mi_curve(tr, te)
