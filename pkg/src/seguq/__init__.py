"""Segmentation uncertainty toolkit.

Skip-connection segmentation networks with a low-rank stochastic logit
head, linear-in-pixels diagonal curvature backpropagation, a diagonal
Gaussian weight posterior, five uncertainty measures and a synthetic
out-of-distribution detection benchmark.
"""

__version__ = "0.1.0"

from .curvature import (accumulate_dataset_curvature, bce_logit_hessian,
                        db_diag, ggn_diag_exact, skip_step)
from .laplace import LaplacePosterior, fit, predictive_ensemble, sample_weights
from .measures import (SampleCube, aggregate, epkl, expected_entropy,
                       mutual_information, pixel_variance, predictive_entropy)
from .metrics import auroc, dice, ratio_report
from .network import Network, ParamPartition, build_unet
from .ssn import (LogitDistribution, TrainConfig, predict_logit_distribution,
                  sample_logits, ssn_loss, train_map)
from .synth import corrupt, generate_dataset

__all__ = [
    "__version__",
    "Network", "ParamPartition", "build_unet",
    "bce_logit_hessian", "db_diag", "ggn_diag_exact", "skip_step",
    "accumulate_dataset_curvature",
    "LogitDistribution", "TrainConfig", "predict_logit_distribution",
    "sample_logits", "ssn_loss", "train_map",
    "LaplacePosterior", "fit", "sample_weights", "predictive_ensemble",
    "SampleCube", "predictive_entropy", "expected_entropy",
    "mutual_information", "epkl", "pixel_variance", "aggregate",
    "auroc", "ratio_report", "dice",
    "generate_dataset", "corrupt",
]
