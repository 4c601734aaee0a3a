"""cexforge: a benchmark factory for stress-testing neural-network verifiers.

Trains small networks that misclassify planted, attack-hidden points inside
robustness balls, exports them as verification instances with the ground
truth kept in a separate secret manifest, and scores verifier verdicts
against that ground truth. Ships a sound interval-propagation verifier with
controllable synthetic bugs as the reference adapter.
"""

__version__ = "0.1.0"

from .attack import AttackConfig, AttackResult, margin, pgd, strong_eval
from .autodiff import Tape, Tensor, backward
from .datagen import DataGenConfig, Dataset, Instance, gen_dataset
from .evaluation import BenchmarkSet, EvalSuiteConfig, filter_benchmark
from .optim import AdamState, LrSchedule, adam_step, cyclic_lr
from .refverify import BugConfig, Verdict, VerifyBudget, find_min_bug_factor, verify
from .training import TrainConfig, TrainLog, train
from .zoo import ArchSpec, ModelParams, ZOO_NAMES, build_arch, init_params

__all__ = [
    "AttackConfig", "AttackResult", "margin", "pgd", "strong_eval",
    "Tape", "Tensor", "backward",
    "DataGenConfig", "Dataset", "Instance", "gen_dataset",
    "BenchmarkSet", "EvalSuiteConfig", "filter_benchmark",
    "AdamState", "LrSchedule", "adam_step", "cyclic_lr",
    "BugConfig", "Verdict", "VerifyBudget", "find_min_bug_factor", "verify",
    "TrainConfig", "TrainLog", "train",
    "ArchSpec", "ModelParams", "ZOO_NAMES", "build_arch", "init_params",
]
