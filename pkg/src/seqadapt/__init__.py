"""Domain-adversarial transformer classifier for multi-spectral time series.

Public surface: the autodiff core, the encoder and adversarial heads, Adam
and schedules, training loops, metrics, domain-gap diagnostics, dataset I/O
and the synthetic shift generator.
"""

from . import analysis, autodiff, checkpoint, cli, dann, data, encoder
from . import metrics, optim, trainer, verify
from .autodiff import Graph, Tensor, grad_check
from .dann import DannParams, HeadConfig, total_loss
from .data import Dataset, DomainShift, GeneratorConfig, generate
from .encoder import EncoderConfig
from .optim import Schedules, lambda_at, lr_at
from .trainer import Model, RunLog, TrainConfig, evaluate, train_baseline, train_dann

__version__ = "0.1.0"
