"""Training objective: event NLL + trigger NLL + weighted contrastive term.

The contrastive term drives class separation: it is the negative mean of
pairwise maximum mean discrepancies (MMD) between per-class feature sets,
so minimizing it pushes class feature distributions apart.  The MMD
estimator is the V-statistic (diagonal kernel terms included) with a single
Gaussian kernel; the bandwidth defaults to the median pairwise distance of
the pooled sample and is treated as a constant under differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ContractError


@dataclass(frozen=True)
class MMDConfig:
    """Gaussian-kernel bandwidth: a positive float, or "median-heuristic"."""

    bandwidth: float | str = "median-heuristic"

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median-heuristic":
                raise ConfigurationError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise ConfigurationError(f"bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True)
class LossConfig:
    lambda_c: float = 1.0

    def __post_init__(self):
        import math

        if not math.isfinite(self.lambda_c) or self.lambda_c < 0:
            raise ConfigurationError(f"lambda_c must be finite and >= 0, got {self.lambda_c}")


@dataclass
class LossBreakdown:
    """The three loss terms and their weighted total.

    ``total = event_nll + trigger_nll + lambda_c * contrastive`` holds by
    construction.  Values are tensors during training; ``detached()`` turns
    them into plain floats for logging.
    """

    event_nll: torch.Tensor | float
    trigger_nll: torch.Tensor | float
    contrastive: torch.Tensor | float
    total: torch.Tensor | float
    lambda_c: float = 1.0
    contrastive_skipped: bool = False

    def detached(self) -> "LossBreakdown":
        as_float = lambda x: float(x.detach()) if torch.is_tensor(x) else float(x)
        return replace(
            self,
            event_nll=as_float(self.event_nll),
            trigger_nll=as_float(self.trigger_nll),
            contrastive=as_float(self.contrastive),
            total=as_float(self.total),
        )

    def as_dict(self) -> dict:
        d = self.detached()
        return {
            "event_nll": d.event_nll,
            "trigger_nll": d.trigger_nll,
            "contrastive": d.contrastive,
            "total": d.total,
            "lambda_c": d.lambda_c,
            "contrastive_skipped": d.contrastive_skipped,
        }


def _as_2d(x, name: str) -> torch.Tensor:
    t = torch.as_tensor(x)
    if not torch.is_floating_point(t):
        t = t.double()
    if t.ndim == 1:
        t = t[None, :]
    if t.ndim != 2 or t.shape[0] < 1:
        raise ContractError(f"{name} must be a nonempty 2-D set of feature vectors")
    return t


def mmd(X, Y, config: MMDConfig = MMDConfig()) -> torch.Tensor:
    """Squared-MMD V-statistic between feature sets X and Y.

    ``mean(Kxx) + mean(Kyy) - 2 mean(Kxy)`` with Gaussian kernel
    ``k(a, b) = exp(-|a - b|^2 / (2 sigma^2))``.  Differentiable w.r.t. the
    features; always >= 0 up to float error.
    """
    X = _as_2d(X, "X")
    Y = _as_2d(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ContractError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    sigma = _bandwidth(X, Y, config)
    denom = 2.0 * sigma * sigma
    kxx = torch.exp(-_sq_dists(X, X) / denom)
    kyy = torch.exp(-_sq_dists(Y, Y) / denom)
    kxy = torch.exp(-_sq_dists(X, Y) / denom)
    return kxx.mean() + kyy.mean() - 2.0 * kxy.mean()


def _sq_dists(X: torch.Tensor, Y: torch.Tensor) -> torch.Tensor:
    # inner-product expansion instead of cdist: supports double backward,
    # which the exact meta-gradient mode needs
    x2 = (X * X).sum(dim=1, keepdim=True)
    y2 = (Y * Y).sum(dim=1, keepdim=True)
    return (x2 + y2.T - 2.0 * (X @ Y.T)).clamp_min(0.0)


def _bandwidth(X: torch.Tensor, Y: torch.Tensor, config: MMDConfig) -> float:
    if isinstance(config.bandwidth, str):
        pooled = torch.cat([X, Y], dim=0).detach()
        if pooled.shape[0] < 2:
            return 1.0
        med = float(torch.pdist(pooled).median())
        return med if med > 0.0 else 1.0
    return float(config.bandwidth)


def contrastive_loss(
    features_by_class: Sequence[torch.Tensor], config: MMDConfig = MMDConfig()
) -> torch.Tensor:
    """Negative mean pairwise MMD over all ordered class pairs.

    The value is <= 0; more negative means better separated classes.
    """
    n = len(features_by_class)
    if n < 2:
        raise ContractError(f"contrastive loss needs >= 2 classes, got {n}")
    sets = [_as_2d(f, f"class {i}") for i, f in enumerate(features_by_class)]
    total = None
    for i in range(n):
        for j in range(i + 1, n):
            d = mmd(sets[i], sets[j], config)
            total = d if total is None else total + d
    # each unordered pair counts twice among the n(n-1) ordered pairs
    return -(2.0 * total) / (n * (n - 1))


def event_nll(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of the gold class under softmax logits."""
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ContractError(f"bad shapes: logits {tuple(logits.shape)}, labels {tuple(labels.shape)}")
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ContractError(f"labels must lie in [0, {logits.shape[1]})")
    return F.cross_entropy(logits, labels)


def trigger_nll(token_logits: torch.Tensor, span: tuple[int, int]) -> torch.Tensor:
    """Mean per-token binary NLL against the 0/1 target derived from a span."""
    token_logits = torch.as_tensor(token_logits)
    if token_logits.ndim != 2 or token_logits.shape[1] != 2:
        raise ContractError(f"token_logits must be [L, 2], got {tuple(token_logits.shape)}")
    lc = token_logits.shape[0]
    start, end = span
    if not (0 <= start < end <= lc):
        raise ContractError(f"invalid span [{start}, {end}) for length {lc}")
    target = torch.zeros(lc, dtype=torch.long)
    target[start:end] = 1
    return F.cross_entropy(token_logits, target)


def batched_trigger_nll(
    trigger_logits: torch.Tensor, targets: torch.Tensor, ctx_valid: torch.Tensor
) -> torch.Tensor:
    """Per-example mean token NLL, then mean over the batch (padding excluded)."""
    logp = F.log_softmax(trigger_logits, dim=-1)
    nll = -logp.gather(-1, targets[..., None]).squeeze(-1)
    per_example = (nll * ctx_valid).sum(dim=-1) / ctx_valid.sum(dim=-1).clamp(min=1)
    return per_example.mean()


def total_loss(
    event_logits: torch.Tensor,
    labels: torch.Tensor,
    trigger_logits: torch.Tensor,
    trigger_targets: torch.Tensor,
    ctx_valid: torch.Tensor,
    class_features: torch.Tensor,
    loss_config: LossConfig = LossConfig(),
    mmd_config: MMDConfig = MMDConfig(),
) -> LossBreakdown:
    """Combine the three terms on one forward batch.

    The contrastive term groups ``class_features`` rows by label; a batch
    with fewer than two distinct labels contributes zero and sets
    ``contrastive_skipped`` instead of raising.
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    ev = event_nll(event_logits, labels)
    tr = batched_trigger_nll(trigger_logits, trigger_targets, ctx_valid)
    present = sorted(set(labels.tolist()))
    skipped = len(present) < 2
    if skipped:
        con = torch.zeros((), dtype=ev.dtype)
    else:
        groups = [class_features[labels == lbl] for lbl in present]
        con = contrastive_loss(groups, mmd_config)
    total = ev + tr + loss_config.lambda_c * con
    return LossBreakdown(
        event_nll=ev,
        trigger_nll=tr,
        contrastive=con,
        total=total,
        lambda_c=loss_config.lambda_c,
        contrastive_skipped=skipped,
    )


__all__ = [
    "MMDConfig",
    "LossConfig",
    "LossBreakdown",
    "mmd",
    "contrastive_loss",
    "event_nll",
    "trigger_nll",
    "batched_trigger_nll",
    "total_loss",
]
