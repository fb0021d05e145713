"""Bilevel episodic optimization.

Inner loop: plain gradient descent from the shared initialization, each
parameter group using its own learnable step size per inner step.  Outer
loop: the query-set loss of the adapted parameters is differentiated back
to the initialization, either exactly (second order, through every inner
step) or with the first-order approximation that treats the adapted
parameters as independent leaves.  First order is the default; the exact
mode exists mainly so gradient checks can pin the algebra down.

The episodic head (verbalizer) is re-initialized to zeros for every task,
because the number and identity of classes change per episode; it is
adapted in the inner loop but never meta-learned.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
import torch

from . import matching
from .data import EpisodeSpec, Example, Pools, Task, sample_disjoint_pair
from .encoder import (
    EncodedBatch,
    TriggerPromptEncoder,
    feature_dim,
    fused_features,
    make_batch,
    new_verbalizer,
    parameter_group,
    run_batch,
    verbalize,
)
from .errors import ConfigurationError, ContractError
from .losses import LossBreakdown, LossConfig, MMDConfig, total_loss

MIN_ALPHA = 1e-8


class ParameterSet(Mapping):
    """Named tensors with a group assignment, behaving like a read-only dict."""

    def __init__(self, params: dict[str, torch.Tensor], group_of: Callable[[str], str] = parameter_group):
        self._params = dict(params)
        self.group_of = group_of

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    @property
    def names(self) -> list[str]:
        return list(self._params)

    @property
    def group_names(self) -> list[str]:
        return sorted({self.group_of(n) for n in self._params})

    def clone(self) -> "ParameterSet":
        return ParameterSet({n: p.clone() for n, p in self._params.items()}, self.group_of)

    def detached(self) -> "ParameterSet":
        return ParameterSet({n: p.detach() for n, p in self._params.items()}, self.group_of)

    def flat(self) -> torch.Tensor:
        """Flat view over all tensors, in name order (for checksums/algebra)."""
        return torch.cat([self._params[n].detach().reshape(-1) for n in sorted(self._params)])

    def checksum(self) -> float:
        return float(self.flat().double().sum())


@dataclass
class AdaptiveLRSchedule:
    """Positive inner-loop step sizes, one per (parameter group, inner step)."""

    group_names: tuple[str, ...]
    alpha: torch.Tensor  # [num_groups, num_steps]
    learnable: bool = False
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {g: i for i, g in enumerate(self.group_names)}
        if self.alpha.ndim != 2 or self.alpha.shape[0] != len(self.group_names):
            raise ConfigurationError(
                f"alpha must be [{len(self.group_names)} x steps], got {tuple(self.alpha.shape)}"
            )

    @classmethod
    def create(
        cls,
        group_names: Sequence[str],
        num_steps: int,
        init: float = 1e-3,
        overrides: dict[str, float] | None = None,
        learnable: bool = False,
        dtype: torch.dtype = torch.float32,
    ) -> "AdaptiveLRSchedule":
        names = tuple(group_names)
        alpha = torch.full((len(names), max(num_steps, 1)), float(init), dtype=dtype)
        for g, value in (overrides or {}).items():
            if g in names:
                alpha[names.index(g)] = float(value)
        alpha.requires_grad_(learnable)
        return cls(group_names=names, alpha=alpha, learnable=learnable)

    @property
    def num_steps(self) -> int:
        return self.alpha.shape[1]

    def rate(self, group: str, step: int) -> torch.Tensor:
        if group not in self._index:
            raise ContractError(f"unknown parameter group {group!r}")
        return self.alpha[self._index[group], step]

    def project_(self) -> None:
        """Clamp step sizes to stay positive after a meta update."""
        with torch.no_grad():
            self.alpha.clamp_(min=MIN_ALPHA)

    def clone(self) -> "AdaptiveLRSchedule":
        alpha = self.alpha.detach().clone().requires_grad_(self.learnable)
        return AdaptiveLRSchedule(self.group_names, alpha, self.learnable)


@dataclass(frozen=True)
class MetaConfig:
    inner_steps: int = 50
    tasks_per_meta_batch: int = 2
    meta_lr: float = 1e-5
    second_order: bool = False
    scheduler: str = "none"  # or "cosine"
    total_iterations: int = 250
    validate_every: int = 25
    inner_batch_cap: int = 50
    inner_lr: float = 1e-3
    verbalizer_lr: float = 1e-2
    alpha_lr: float = 1e-4
    alpha_learnable: bool = True
    zero_shot_support_shots: int = 5

    def __post_init__(self):
        if self.inner_steps < 1 or self.tasks_per_meta_batch < 1:
            raise ConfigurationError("inner_steps and tasks_per_meta_batch must be >= 1")
        if self.scheduler not in ("none", "cosine"):
            raise ConfigurationError(f"scheduler must be 'none' or 'cosine', got {self.scheduler!r}")
        if self.inner_batch_cap < 1 or self.total_iterations < 1 or self.validate_every < 1:
            raise ConfigurationError("inner_batch_cap, total_iterations, validate_every must be >= 1")


# --------------------------------------------------------------------------
# Functional core
# --------------------------------------------------------------------------

LossFn = Callable[[Mapping], torch.Tensor]


def inner_adapt(
    theta: ParameterSet,
    loss_fn: LossFn,
    schedule: AdaptiveLRSchedule,
    steps: int,
    track_graph: bool = False,
) -> ParameterSet:
    """Adapt by ``steps`` plain gradient-descent updates on ``loss_fn``.

    ``track_graph=True`` keeps the adapted parameters differentiable w.r.t.
    both the initialization and the step sizes; the produced values are
    identical either way.  The source parameter set is never mutated.
    """
    if steps > schedule.num_steps:
        raise ContractError(f"{steps} steps exceed schedule depth {schedule.num_steps}")
    params = dict(theta.items())
    for step in range(steps):
        loss = loss_fn(params)
        grads = torch.autograd.grad(
            loss, list(params.values()), create_graph=track_graph, allow_unused=True
        )
        updated = {}
        for (name, p), g in zip(params.items(), grads):
            if g is None:
                updated[name] = p
            else:
                updated[name] = p - schedule.rate(theta.group_of(name), step) * g
        params = updated
    return ParameterSet(params, theta.group_of)


@dataclass
class MetaGradient:
    theta_grads: dict[str, torch.Tensor | None]
    alpha_grad: torch.Tensor | None
    query_loss: LossBreakdown


def meta_gradient(
    init: ParameterSet,
    support_loss_fn: LossFn,
    query_loss_fn: Callable[[Mapping], LossBreakdown | torch.Tensor],
    schedule: AdaptiveLRSchedule,
    steps: int,
    second_order: bool,
    meta_names: Sequence[str] | None = None,
) -> MetaGradient:
    """Gradient of the post-adaptation query loss w.r.t. the initialization.

    Second order differentiates through every inner step (and yields step-size
    gradients when the schedule is learnable); first order evaluates the plain
    gradient at the adapted parameters and maps it back by name.  ``init`` may
    contain episodic parameters (the fresh verbalizer) on top of the
    meta-learned ones; ``meta_names`` restricts which names get gradients.
    """
    names = list(meta_names) if meta_names is not None else init.names
    phi = inner_adapt(init, support_loss_fn, schedule, steps, track_graph=second_order)
    result = query_loss_fn(phi)
    breakdown = (
        result
        if isinstance(result, LossBreakdown)
        else LossBreakdown(result * 0.0, result * 0.0, result * 0.0, result, lambda_c=0.0)
    )
    loss = breakdown.total
    if second_order:
        inputs = [init[n] for n in names]
        want_alpha = schedule.learnable and steps > 0
        if want_alpha:
            inputs.append(schedule.alpha)
        grads = torch.autograd.grad(loss, inputs, allow_unused=True)
        alpha_grad = grads[-1] if want_alpha else None
        theta_grads = dict(zip(names, grads[: len(names)]))
    else:
        grads = torch.autograd.grad(loss, [phi[n] for n in names], allow_unused=True)
        theta_grads = dict(zip(names, grads))
        alpha_grad = None
    theta_grads = {n: (g.detach() if g is not None else None) for n, g in theta_grads.items()}
    return MetaGradient(
        theta_grads=theta_grads,
        alpha_grad=alpha_grad.detach() if alpha_grad is not None else None,
        query_loss=breakdown.detached(),
    )


# --------------------------------------------------------------------------
# Episodic trainer
# --------------------------------------------------------------------------

class MetaLearner:
    """Owns the shared initialization, the step-size schedule and both
    optimizers; exposes one meta update per call plus the evaluation
    protocols."""

    def __init__(
        self,
        model: TriggerPromptEncoder,
        meta_config: MetaConfig = MetaConfig(),
        loss_config: LossConfig = LossConfig(),
        mmd_config: MMDConfig = MMDConfig(),
        template: str = "A",
        feature_mode: str = "full",
    ):
        self.model = model
        self.meta_config = meta_config
        self.loss_config = loss_config
        self.mmd_config = mmd_config
        self.template = template
        self.feature_mode = feature_mode
        groups = sorted({parameter_group(n) for n, _ in model.named_parameters()} | {"verbalizer"})
        self.schedule = AdaptiveLRSchedule.create(
            groups,
            meta_config.inner_steps,
            init=meta_config.inner_lr,
            overrides={"verbalizer": meta_config.verbalizer_lr},
            learnable=meta_config.second_order and meta_config.alpha_learnable,
        )
        self.meta_opt = torch.optim.AdamW(
            model.parameters(), lr=meta_config.meta_lr, weight_decay=0.0
        )
        self.lr_scheduler = (
            torch.optim.lr_scheduler.CosineAnnealingLR(
                self.meta_opt, T_max=meta_config.total_iterations
            )
            if meta_config.scheduler == "cosine"
            else None
        )
        self.alpha_opt = (
            torch.optim.AdamW([self.schedule.alpha], lr=meta_config.alpha_lr, weight_decay=0.0)
            if self.schedule.learnable
            else None
        )
        self.skipped_steps = 0

    # -- parameter plumbing --------------------------------------------------

    def theta(self) -> ParameterSet:
        return ParameterSet(dict(self.model.named_parameters()))

    def task_init(self, n_way: int) -> ParameterSet:
        params = dict(self.model.named_parameters())
        params.update(new_verbalizer(self.feat_dim, n_way))
        return ParameterSet(params)

    @property
    def feat_dim(self) -> int:
        return feature_dim(self.model.config, self.feature_mode)

    @property
    def meta_names(self) -> list[str]:
        return [n for n, _ in self.model.named_parameters()]

    # -- loss functions over encoded batches ----------------------------------

    def _chunks(self, examples: Sequence[Example], labels: Sequence[int]):
        cap = self.meta_config.inner_batch_cap
        chunks = []
        for i in range(0, len(examples), cap):
            batch = make_batch(examples[i : i + cap], self.template, self.model.config.max_len)
            chunks.append((batch, torch.tensor(labels[i : i + cap], dtype=torch.long)))
        return chunks

    def _batch_breakdown(
        self, params: Mapping, batch: EncodedBatch, labels: torch.Tensor
    ) -> LossBreakdown:
        out = run_batch(self.model, params, batch)
        feats = fused_features(out, self.feature_mode)
        logits, _ = verbalize(feats, params["verbalizer.weight"], params["verbalizer.bias"])
        return total_loss(
            logits,
            labels,
            out.trigger_logits,
            batch.trigger_targets,
            out.ctx_valid,
            feats,
            self.loss_config,
            self.mmd_config,
        )

    def support_loss_fn(self, examples: Sequence[Example], labels: Sequence[int]) -> LossFn:
        """Inner-loop objective; batches above the cap are cycled chunk-wise."""
        chunks = self._chunks(examples, labels)
        counter = {"step": 0}

        def fn(params: Mapping) -> torch.Tensor:
            batch, lbl = chunks[counter["step"] % len(chunks)]
            counter["step"] += 1
            return self._batch_breakdown(params, batch, lbl).total

        return fn

    def query_loss_fn(self, examples: Sequence[Example], labels: Sequence[int]):
        batch = make_batch(examples, self.template, self.model.config.max_len)
        lbl = torch.tensor(labels, dtype=torch.long)

        def fn(params: Mapping) -> LossBreakdown:
            return self._batch_breakdown(params, batch, lbl)

        return fn

    # -- meta updates ---------------------------------------------------------

    def task_meta_gradient(self, support_task: Task, query_task: Task | None = None) -> MetaGradient:
        """Meta-gradient of one episode.

        Few-shot: support and query come from the same task.  Zero-shot
        passes a separate ``query_task`` whose label set is disjoint.
        """
        query_task = query_task if query_task is not None else support_task
        if not support_task.support:
            raise ContractError(
                "task has an empty support set; zero-shot training must supply a disjoint pair"
            )
        init = self.task_init(query_task.n_way)
        sup_fn = self.support_loss_fn(
            list(support_task.support), support_task.local_labels(support_task.support)
        )
        qry_fn = self.query_loss_fn(
            list(query_task.query), query_task.local_labels(query_task.query)
        )
        return meta_gradient(
            init,
            sup_fn,
            qry_fn,
            self.schedule,
            self.meta_config.inner_steps,
            self.meta_config.second_order,
            meta_names=self.meta_names,
        )

    def meta_step(self, tasks: Sequence[Task]) -> dict:
        """Average task meta-gradients and take one AdamW step on the
        initialization (and on the step sizes when learnable)."""
        grads = [self.task_meta_gradient(task) for task in tasks]
        return self._apply(grads)

    def zero_shot_meta_step(
        self, pools: Pools, spec: EpisodeSpec, rng: np.random.Generator, task_id: int = 0
    ) -> dict:
        """One meta update from disjoint (support, query) task pairs."""
        grads = []
        pair_labels = []
        for i in range(self.meta_config.tasks_per_meta_batch):
            sup_task, qry_task = sample_disjoint_pair(
                pools,
                spec,
                rng,
                support_shots=self.meta_config.zero_shot_support_shots,
                task_id=task_id + i,
            )
            pair_labels.append(
                {"support": sorted(sup_task.label_map), "query": sorted(qry_task.label_map)}
            )
            grads.append(self.task_meta_gradient(sup_task, qry_task))
        metrics = self._apply(grads)
        metrics["pair_labels"] = pair_labels
        return metrics

    def _apply(self, grads: Sequence[MetaGradient]) -> dict:
        averaged: dict[str, torch.Tensor] = {}
        finite = True
        for name, param in self.model.named_parameters():
            gs = [mg.theta_grads.get(name) for mg in grads]
            gs = [g for g in gs if g is not None]
            if not gs:
                averaged[name] = torch.zeros_like(param)
                continue
            g = torch.stack([t.detach() for t in gs]).mean(dim=0)
            if not torch.isfinite(g).all():
                finite = False
            averaged[name] = g
        alpha_grad = None
        if self.alpha_opt is not None:
            ags = [mg.alpha_grad for mg in grads if mg.alpha_grad is not None]
            if ags:
                alpha_grad = torch.stack([a.detach() for a in ags]).mean(dim=0)
                if not torch.isfinite(alpha_grad).all():
                    finite = False
        metrics = {
            "per_task": [mg.query_loss.as_dict() for mg in grads],
            "skipped": not finite,
            "meta_lr": self.meta_opt.param_groups[0]["lr"],
        }
        if not finite:
            # skip the update entirely; a single diverged task must not poison theta
            self.skipped_steps += 1
            if self.lr_scheduler is not None:
                self.lr_scheduler.step()
            return metrics
        for name, param in self.model.named_parameters():
            param.grad = averaged[name]
        self.meta_opt.step()
        self.meta_opt.zero_grad(set_to_none=True)
        if self.lr_scheduler is not None:
            self.lr_scheduler.step()
        if self.alpha_opt is not None and alpha_grad is not None:
            self.schedule.alpha.grad = alpha_grad
            self.alpha_opt.step()
            self.alpha_opt.zero_grad(set_to_none=True)
            self.schedule.project_()
        return metrics

    # -- evaluation protocols --------------------------------------------------

    def adapt(self, task: Task, steps: int | None = None) -> ParameterSet:
        """Inner-adapt a fresh episodic head on the task's support set."""
        if not task.support:
            raise ContractError("cannot adapt on an empty support set")
        steps = self.meta_config.inner_steps if steps is None else steps
        init = self.task_init(task.n_way)
        fn = self.support_loss_fn(list(task.support), task.local_labels(task.support))
        with torch.enable_grad():
            return inner_adapt(init, fn, self.schedule, steps, track_graph=False).detached()

    def predict(self, params: Mapping, examples: Sequence[Example]) -> np.ndarray:
        batch = make_batch(list(examples), self.template, self.model.config.max_len)
        with torch.no_grad():
            out = run_batch(self.model, params, batch)
            feats = fused_features(out, self.feature_mode)
            _, preds = verbalize(feats, params["verbalizer.weight"], params["verbalizer.bias"])
        return preds.numpy()

    def features(self, examples: Sequence[Example], params: Mapping | None = None) -> np.ndarray:
        """Fused event features under the current (or given) parameters."""
        params = params if params is not None else self.theta()
        batch = make_batch(list(examples), self.template, self.model.config.max_len)
        with torch.no_grad():
            out = run_batch(self.model, params, batch)
            return fused_features(out, self.feature_mode).numpy()

    def evaluate_few_shot(self, task: Task, steps: int | None = None) -> dict[str, float]:
        """Adapt on support, classify query; F1 is direct (label-aligned)."""
        phi = self.adapt(task, steps=steps)
        preds = self.predict(phi, task.query)
        gold = np.asarray(task.local_labels(task.query))
        record = {"f1": matching.micro_f1(preds, gold)}
        record.update(matching.clustering_metrics(preds, gold))
        return record

    def evaluate_zero_shot(self, task: Task, kmeans_seed: int = 0) -> dict[str, float]:
        """Cluster query features into N groups and score against gold."""
        feats = self.features(task.query)
        gold = np.asarray(task.local_labels(task.query))
        result = matching.kmeans(feats, task.n_way, seed=kmeans_seed)
        return matching.episode_metrics(result.cluster_ids, gold, task.n_way)


__all__ = [
    "MIN_ALPHA",
    "ParameterSet",
    "AdaptiveLRSchedule",
    "MetaConfig",
    "inner_adapt",
    "MetaGradient",
    "meta_gradient",
    "MetaLearner",
]
