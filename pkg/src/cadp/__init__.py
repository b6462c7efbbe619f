"""Content-aware privatization of tabular and image datasets.

An invertible conditional network maps each record to an isotropic
Gaussian latent code. Privatization clips the code's L1 norm, adds
Laplace noise calibrated to the clip radius and the privacy budget,
and maps the noisy code back through the inverse network. Labels pass
through unchanged, so any downstream model can consume the output.

The estimators follow the scikit-learn conventions (``fit``,
``transform``, ``get_params``); the ``cadp`` console script drives the
full train / privatize / evaluate protocol.
"""

from .classifier import MlpClassifier, evaluate
from .data import (ConditionSpec, LabeledDataset, dequantize, export_dataset,
                   load_csv, load_idx, make_synthetic, marginal_distance,
                   mean_l2_distortion, standardize_features,
                   stratified_subset, write_idx)
from .dpsgd import (DpSgdClassifier, calibrate_noise_multiplier,
                    simple_accountant)
from .exceptions import (CadpError, ConfigError, DataError, DiagnosticError,
                         DivergenceError, MechanismError, SchemaError)
from .flow import ConditionalFlow, latent_diagnostics
from .privacy import (CLIP_ONLY, CLIP_RESCALE_ALWAYS, CadpPrivatizer,
                      LaplaceSampler, PrivacyParams, ScalarLaplaceMechanism,
                      cadp_privatize, clip_l1, empirical_dp_ratio,
                      privatize_dataset, resolve_sensitivity)

__version__ = "0.1.0"

__all__ = [
    "CLIP_ONLY",
    "CLIP_RESCALE_ALWAYS",
    "CadpError",
    "CadpPrivatizer",
    "ConditionSpec",
    "ConditionalFlow",
    "ConfigError",
    "DataError",
    "DiagnosticError",
    "DivergenceError",
    "DpSgdClassifier",
    "LabeledDataset",
    "LaplaceSampler",
    "MechanismError",
    "MlpClassifier",
    "PrivacyParams",
    "ScalarLaplaceMechanism",
    "SchemaError",
    "cadp_privatize",
    "calibrate_noise_multiplier",
    "clip_l1",
    "dequantize",
    "empirical_dp_ratio",
    "evaluate",
    "export_dataset",
    "latent_diagnostics",
    "load_csv",
    "load_idx",
    "make_synthetic",
    "marginal_distance",
    "mean_l2_distortion",
    "privatize_dataset",
    "resolve_sensitivity",
    "simple_accountant",
    "standardize_features",
    "stratified_subset",
    "write_idx",
]
