"""Versioned parameter checkpoints.

A checkpoint bundles the encoder weights, the encoder architecture, the
inner-loop step-size table and an arbitrary JSON-able ``extra`` dict (the
runner stores its full config snapshot there).  Tensors round-trip
bit-exactly through ``torch.save``/``torch.load``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .encoder import EncoderConfig, TriggerPromptEncoder
from .errors import ConfigurationError

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    encoder_config: EncoderConfig
    params: dict[str, torch.Tensor]
    alpha: torch.Tensor
    alpha_groups: tuple[str, ...]
    template: str = "A"
    feature_mode: str = "full"
    extra: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": ckpt.version,
        "encoder_config": asdict(ckpt.encoder_config),
        "params": {k: v.detach().cpu() for k, v in ckpt.params.items()},
        "alpha": ckpt.alpha.detach().cpu(),
        "alpha_groups": list(ckpt.alpha_groups),
        "template": ckpt.template,
        "feature_mode": ckpt.feature_mode,
        "extra": ckpt.extra,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("version")
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {version!r}")
    return Checkpoint(
        encoder_config=EncoderConfig(**payload["encoder_config"]),
        params=payload["params"],
        alpha=payload["alpha"],
        alpha_groups=tuple(payload["alpha_groups"]),
        template=payload["template"],
        feature_mode=payload["feature_mode"],
        extra=payload["extra"],
        version=version,
    )


def build_model(ckpt: Checkpoint) -> TriggerPromptEncoder:
    model = TriggerPromptEncoder(ckpt.encoder_config)
    model.load_state_dict(ckpt.params)
    return model


__all__ = ["FORMAT_VERSION", "Checkpoint", "save_checkpoint", "load_checkpoint", "build_model"]
