"""Flow and score matching on the probability simplex with temperature-
annealed Gumbel-Softmax interpolants, plus straight-through classifier
guidance and a reproducible toy-experiment harness."""

from .config import ExperimentConfig, config_from_dict, load_config
from .experiment import run_toy_experiment
from .flow import SamplerConfig, fm_sample, fm_sample_batch, fm_train_step
from .guidance import GuidanceConfig, ToyLinearClassifier, guided_sample
from .net import Denoiser, init_denoiser, load_checkpoint, save_checkpoint
from .score import sm_sample, sm_sample_batch, sm_train_step
from .simplex import NoiseConfig, TemperatureSchedule
from .toy import ToySpec, empirical_kl, gen_toy_target, sample_dataset

__all__ = [
    "Denoiser",
    "ExperimentConfig",
    "GuidanceConfig",
    "NoiseConfig",
    "SamplerConfig",
    "TemperatureSchedule",
    "ToyLinearClassifier",
    "ToySpec",
    "config_from_dict",
    "empirical_kl",
    "fm_sample",
    "fm_sample_batch",
    "fm_train_step",
    "gen_toy_target",
    "guided_sample",
    "init_denoiser",
    "load_checkpoint",
    "load_config",
    "run_toy_experiment",
    "sample_dataset",
    "save_checkpoint",
    "sm_sample",
    "sm_sample_batch",
    "sm_train_step",
]

__version__ = "0.1.0"
