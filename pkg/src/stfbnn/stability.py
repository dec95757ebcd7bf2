"""Layer stability: solely-retrain one layer, compare it to the pretrained one.

The stability of layer k is the mean absolute row cosine between the
pretrained weight matrix and the weight matrix obtained by reinitializing
layer k and retraining it alone, all other layers frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError, SingularityError
from .nn import MlpModel, TrainConfig, he_init, train_deterministic
from .report import config_hash, write_csv, write_json
from .rng import Prng

# convergence rule for "retrained until converged": stop once the best epoch
# loss improves by less than PLATEAU_TOL over PLATEAU_SPAN epochs
PLATEAU_TOL = 1e-4
PLATEAU_SPAN = 5
DEFAULT_RETRAIN_EPOCHS = 60


def layer_stability(w: np.ndarray, w_prime: np.ndarray) -> float:
    """Mean over rows of |w_i . w'_i| / (||w_i|| ||w'_i||), in [0, 1]."""
    w = np.asarray(w, dtype=np.float64)
    w_prime = np.asarray(w_prime, dtype=np.float64)
    if w.shape != w_prime.shape or w.ndim != 2:
        raise DimensionError(f"need equal 2-D shapes, got {w.shape} vs {w_prime.shape}")
    na = np.linalg.norm(w, axis=1)
    nb = np.linalg.norm(w_prime, axis=1)
    for name, norms in (("first", na), ("second", nb)):
        zero = np.flatnonzero(norms == 0.0)
        if len(zero):
            raise SingularityError(f"zero row {zero[0]} in {name} matrix", int(zero[0]))
    cos = np.abs((w * w_prime).sum(axis=1)) / (na * nb)
    return float(np.minimum(cos, 1.0).mean())


def retrain_layer(pretrained: MlpModel, k: int, dataset, cfg: TrainConfig,
                  prng: Prng) -> MlpModel:
    """Reinitialize layer k (1-indexed) and train it solo to convergence.

    Every other layer of the returned model is bit-identical to the input.
    """
    if not 1 <= k <= pretrained.depth:
        raise InputError(f"layer index must be in 1..{pretrained.depth}, got {k}")
    model = pretrained.copy()
    layer = model.layers[k - 1]
    fresh = he_init([layer.in_dim, layer.out_dim], prng)
    layer.weight[...] = fresh.layers[0].weight
    layer.bias[...] = 0.0
    if cfg.epochs:
        train_deterministic(model, dataset, cfg, prng, trainable={k - 1},
                            plateau=(PLATEAU_TOL, PLATEAU_SPAN))
    return model


@dataclass
class StabilityReport:
    layer_means: list[float]
    layer_stds: list[float]
    per_seed: dict[int, list[float]]
    config_hash: str

    def to_json(self, path: str) -> None:
        write_json({
            "kind": "stability_profile",
            "config_hash": self.config_hash,
            "layer_means": self.layer_means,
            "layer_stds": self.layer_stds,
            "per_seed": {str(s): v for s, v in self.per_seed.items()},
        }, path)

    def to_csv(self, path: str) -> None:
        rows = [(i + 1, repr(m), repr(s))
                for i, (m, s) in enumerate(zip(self.layer_means, self.layer_stds))]
        write_csv(path, ["layer_index", "mean", "std"], rows)


@dataclass
class StabilityProtocol:
    arch: list[int]
    pretrain: TrainConfig
    retrain: TrainConfig  # epoch field is the budget; plateau rule applies


def stability_profile(protocol: StabilityProtocol, dataset, seeds: list[int]) -> StabilityReport:
    """Pretrain per seed, solely retrain every layer, aggregate Eq.-style
    stabilities across seeds."""
    if len(seeds) < 2:
        raise InputError("need at least 2 seeds")
    depth = len(protocol.arch) - 1
    per_seed: dict[int, list[float]] = {}
    for seed in seeds:
        root = Prng(seed)
        model = he_init(protocol.arch, root.spawn(0))
        train_deterministic(model, dataset, protocol.pretrain, root.spawn(1))
        values = []
        for k in range(1, depth + 1):
            redone = retrain_layer(model, k, dataset, protocol.retrain, root.spawn(1 + k))
            values.append(layer_stability(model.layers[k - 1].weight,
                                          redone.layers[k - 1].weight))
        per_seed[seed] = values
    stacked = np.array([per_seed[s] for s in seeds])
    digest = config_hash({
        "arch": protocol.arch,
        "seeds": seeds,
        "pretrain": protocol.pretrain,
        "retrain": protocol.retrain,
    })
    return StabilityReport(
        layer_means=stacked.mean(axis=0).tolist(),
        layer_stds=stacked.std(axis=0).tolist(),
        per_seed=per_seed,
        config_hash=digest,
    )
