"""satbench: adversarial-robustness workbench.

A self-contained testbed for the stochastic affine transform input
defense: dataset ingestion, a small manually-differentiated CNN,
targeted white-box attacks (FGSM, iterated FGSM, CW, BPDA), distortion
metrics, and the evaluation harness that ties them together.
"""

__version__ = "0.1.0"

from .attacks import (
    AdversarialExample,
    AttackBudget,
    AttackConfig,
    bpda,
    cw,
    fgsm,
    ifgsm,
)
from .errors import ConfigError, FormatError, SatbenchError, ShapeError, TrainingError
from .imagecore import (
    Dataset,
    Image,
    LabeledSample,
    load_cifar10,
    load_image,
    load_mnist_idx,
    save_cifar10,
    save_image,
    synth_dataset,
)
from .metrics import MetricReport, l2_distance, psnr, report, ssim_global
from .model import (
    Classifier,
    TrainConfig,
    forward,
    init_classifier,
    load_checkpoint,
    loss_and_input_grad,
    predict,
    save_checkpoint,
    sgd_step,
    train,
)
from .transform import (
    BitDepth,
    DefenseKind,
    Identity,
    Sat,
    SatDraw,
    SatParams,
    bit_depth_reduce,
    defend,
    sat_apply,
    sat_draw,
)

__all__ = [
    "AdversarialExample",
    "AttackBudget",
    "AttackConfig",
    "BitDepth",
    "Classifier",
    "ConfigError",
    "Dataset",
    "DefenseKind",
    "FormatError",
    "Identity",
    "Image",
    "LabeledSample",
    "MetricReport",
    "Sat",
    "SatDraw",
    "SatParams",
    "SatbenchError",
    "ShapeError",
    "TrainConfig",
    "TrainingError",
    "bit_depth_reduce",
    "bpda",
    "cw",
    "defend",
    "fgsm",
    "forward",
    "ifgsm",
    "init_classifier",
    "l2_distance",
    "load_checkpoint",
    "load_cifar10",
    "load_image",
    "load_mnist_idx",
    "loss_and_input_grad",
    "predict",
    "psnr",
    "report",
    "sat_apply",
    "sat_draw",
    "save_cifar10",
    "save_checkpoint",
    "save_image",
    "sgd_step",
    "ssim_global",
    "synth_dataset",
    "train",
]
