"""Episodic meta-learning for zero- and few-shot event detection."""

__version__ = "0.1.0"

from .data import CorpusSpec, EpisodeSpec, Example, Task, generate_corpus, load_jsonl, save_jsonl
from .encoder import EncoderConfig, PromptTemplate, TEMPLATES, TriggerPromptEncoder
from .errors import (
    ConfigurationError,
    ContractError,
    IngestionError,
    MetaedError,
    SamplingError,
)
from .losses import LossBreakdown, LossConfig, MMDConfig, contrastive_loss, mmd
from .meta import AdaptiveLRSchedule, MetaConfig, MetaLearner, ParameterSet, inner_adapt, meta_gradient
from .runner import RunConfig, RunReport, run_ablation, run_sweep, run_train

__all__ = [
    "__version__",
    "CorpusSpec",
    "EpisodeSpec",
    "Example",
    "Task",
    "generate_corpus",
    "load_jsonl",
    "save_jsonl",
    "EncoderConfig",
    "PromptTemplate",
    "TEMPLATES",
    "TriggerPromptEncoder",
    "MetaedError",
    "ConfigurationError",
    "IngestionError",
    "SamplingError",
    "ContractError",
    "LossBreakdown",
    "LossConfig",
    "MMDConfig",
    "mmd",
    "contrastive_loss",
    "AdaptiveLRSchedule",
    "MetaConfig",
    "MetaLearner",
    "ParameterSet",
    "inner_adapt",
    "meta_gradient",
    "RunConfig",
    "RunReport",
    "run_train",
    "run_sweep",
    "run_ablation",
]
