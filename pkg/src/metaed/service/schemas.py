"""Pydantic request/response models for the service API.

The config models mirror the core dataclasses field-for-field (a test pins
the defaults together); ``to_core()`` hands validation of cross-field rules
to the core constructors.
"""

from __future__ import annotations

from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict

from ..runner import RunConfig, config_from_dict


class CorpusModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    num_event_types: int = 15
    triggers_per_type: int = 2
    background_vocab: int = 50
    context_len_range: tuple[int, int] = (8, 16)
    examples_per_type: int = 60
    trigger_noise: float = 0.0
    seed: int = 0


class EpisodeModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    n_way: int = 5
    k_shot: int = 5
    query_per_class: int = 5
    seed: int = 0


class EncoderModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64


class MetaModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    inner_steps: int = 50
    tasks_per_meta_batch: int = 2
    meta_lr: float = 1e-5
    second_order: bool = False
    scheduler: Literal["none", "cosine"] = "none"
    total_iterations: int = 250
    validate_every: int = 25
    inner_batch_cap: int = 50
    inner_lr: float = 1e-3
    verbalizer_lr: float = 1e-2
    alpha_lr: float = 1e-4
    alpha_learnable: bool = True
    zero_shot_support_shots: int = 5


class LossModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    lambda_c: float = 1.0


class MMDModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    bandwidth: Union[float, Literal["median-heuristic"]] = "median-heuristic"


class RunConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    mode: Literal["zero_shot", "few_shot"] = "few_shot"
    corpus: CorpusModel = CorpusModel()
    dataset_path: Optional[str] = None
    episode: EpisodeModel = EpisodeModel()
    encoder: EncoderModel = EncoderModel()
    meta: MetaModel = MetaModel()
    loss: LossModel = LossModel()
    mmd: MMDModel = MMDModel()
    prompt: str = "A"
    seed: int = 0
    num_seeds: int = 3
    output_dir: str = "run"
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_counts: Optional[tuple[int, int, int]] = None
    val_episodes: int = 8
    test_episodes: int = 16
    feature_mode: Literal["full", "v_only", "t_only"] = "full"
    ablate_meta: bool = False

    def to_core(self) -> RunConfig:
        return config_from_dict(self.model_dump())


class TrainRequest(BaseModel):
    config: RunConfigModel = RunConfigModel()
    resume: bool = False


class EvalRequest(BaseModel):
    checkpoint: str
    test_episodes: Optional[int] = None


class SweepRequest(BaseModel):
    config: RunConfigModel = RunConfigModel()
    parameter: Literal["lambda_c", "prompt", "inner_steps", "k_shot"]
    values: list[Union[float, int, str]]


class AblateRequest(BaseModel):
    config: RunConfigModel = RunConfigModel()
    components: Optional[list[str]] = None


class ExportFeaturesRequest(BaseModel):
    checkpoint: str
    output: str
    episodes: Optional[int] = None


class CorpusExportRequest(BaseModel):
    corpus: CorpusModel = CorpusModel()
    path: str


class RunReportModel(BaseModel):
    config: dict[str, Any]
    per_seed: list[dict[str, Any]]
    test_mean: dict[str, float]
    test_std: dict[str, float]
    wall_clock_sec: float
    output_dir: str


class EvalResponse(BaseModel):
    test: dict[str, float]
    episodes: list[dict[str, float]]
    config: dict[str, Any]


class SweepResponse(BaseModel):
    parameter: str
    rows: list[dict[str, Any]]
    reports: list[dict[str, Any]]


class AblateResponse(BaseModel):
    rows: list[dict[str, Any]]


class ExportFeaturesResponse(BaseModel):
    rows: int
    path: str


class CorpusExportResponse(BaseModel):
    records: int
    path: str


class TemplateInfo(BaseModel):
    id: str
    tokens: list[int]
    slot_index: int


class HealthResponse(BaseModel):
    status: str
    version: str
