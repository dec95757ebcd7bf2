"""Two-phase Bayesian-first-layer networks at desk scale.

Phase 1 trains a deterministic ReLU MLP; phase 2 replaces one layer with a
mean-field Gaussian trained by the reparameterization trick against frozen
remaining weights. The package adds the analysis tooling around that idea:
layer-stability profiles, calibration and confidence-threshold evaluation,
a PAC-Bayes generalization bound, far-input confidence caps, adversarial
attacks/training, and membership inference, all seeded and reproducible.
"""

__version__ = "0.1.0"

from .bayes import (ElboConfig, StfModel, VariationalLayer, elbo_loss,
                    init_variational, kl_gaussian_to_std_normal, load_stf,
                    sample_weights, save_stf, stf_train)
from .data import (CorruptionSpec, Dataset, corrupt, corruption_grid,
                   desk_corpus, load_idx, make_blobs, make_image_corpus,
                   make_two_moons, normalize, save_idx, split_train_test)
from .errors import (ConfigError, DimensionError, FormatError, InputError,
                     RegionError, SingularityError, TrainingError, UsageError)
from .nn import (DenseLayer, MlpModel, SgdConfig, TrainConfig, accuracy,
                 backward, forward, he_init, load_model, sample_gaussian,
                 save_model, sgd_step, softmax_cross_entropy, to_binary_logit,
                 train_deterministic)
from .rng import Prng
from .stability import (StabilityProtocol, StabilityReport, layer_stability,
                        retrain_layer, stability_profile)
from .uncertainty import (AsymptoticBound, EceReport, PredictiveSummary,
                          accuracy_at_threshold, asymptotic_bound, ece,
                          mc_predict, point_predict, probit_logit, scale_sweep)
from .bounds import (BoundReport, IterateRecorder, Sigma2Estimate, delta_term,
                     empirical_risk_mc, estimate_sigma2, pac_bayes_bound)
from .attacks import (AttackConfig, MiReport, adversarial_train, attack_eval,
                      fgsm, mi_attack, mi_curve, pgd)
