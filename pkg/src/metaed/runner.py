"""Experiment harness: full training runs, sweeps, ablations and exports.

A run trains ``num_seeds`` models (one per derived seed), validates every
``validate_every`` iterations, keeps the best-validation checkpoint per
seed, and reports test metrics as mean +- std across seeds.  Validation and
test episodes are derived from the *base* seed only, so they are fixed
across the per-seed models and across sweep variants; per-iteration training
episodes are derived statelessly from (seed, iteration), which makes runs
resumable and exactly reproducible.

Training runs single-threaded: reductions then have a fixed order and two
runs with equal configs produce bit-identical reports.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
import warnings
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import matching
from .checkpoint import Checkpoint, build_model, load_checkpoint, save_checkpoint
from .data import (
    CorpusSpec,
    EpisodeSpec,
    Pools,
    corpus_layout,
    generate_corpus,
    load_jsonl,
    max_context_len,
    sample_task,
    split_pools,
)
from .encoder import (
    EncoderConfig,
    TEMPLATES,
    TriggerPromptEncoder,
    get_template,
    make_batch,
    new_verbalizer,
)
from .errors import ConfigurationError
from .losses import LossConfig, MMDConfig
from .matching import METRIC_KEYS
from .meta import MetaConfig, MetaLearner

OUTPUT_ROOT_ENV = "METAED_OUTPUT_ROOT"

SWEEPABLE = ("lambda_c", "prompt", "inner_steps", "k_shot")
ABLATABLE = ("trigger", "verbalizer", "meta_learner")


@dataclass(frozen=True)
class EncoderArch:
    """Architecture knobs; vocabulary size and max length are derived from
    the corpus at build time."""

    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64


@dataclass(frozen=True)
class RunConfig:
    mode: str = "few_shot"  # or "zero_shot"
    corpus: CorpusSpec = CorpusSpec()
    dataset_path: str | None = None
    episode: EpisodeSpec = EpisodeSpec(n_way=5, k_shot=5, query_per_class=5)
    encoder: EncoderArch = EncoderArch()
    meta: MetaConfig = MetaConfig()
    loss: LossConfig = LossConfig()
    mmd: MMDConfig = MMDConfig()
    prompt: str = "A"
    seed: int = 0
    num_seeds: int = 3
    output_dir: str = "run"
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_counts: tuple[int, int, int] | None = None
    val_episodes: int = 8
    test_episodes: int = 16
    feature_mode: str = "full"  # ablations: "v_only" (no trigger), "t_only" (no verbalizer)
    ablate_meta: bool = False  # pooled supervised training, episodic fine-tune at test only

    def __post_init__(self):
        if self.mode not in ("zero_shot", "few_shot"):
            raise ConfigurationError(f"mode must be 'zero_shot' or 'few_shot', got {self.mode!r}")
        if self.mode == "zero_shot" and self.episode.k_shot != 0:
            object.__setattr__(self, "episode", replace(self.episode, k_shot=0))
        if self.num_seeds < 1 or self.val_episodes < 1 or self.test_episodes < 1:
            raise ConfigurationError("num_seeds, val_episodes, test_episodes must be >= 1")
        get_template(self.prompt)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_from_dict(d: dict) -> RunConfig:
    """Build a RunConfig from (possibly partial) nested plain dicts."""
    d = dict(d)
    nested = {
        "corpus": CorpusSpec,
        "episode": EpisodeSpec,
        "encoder": EncoderArch,
        "meta": MetaConfig,
        "loss": LossConfig,
        "mmd": MMDConfig,
    }
    kwargs = {}
    try:
        for key, cls in nested.items():
            if key in d:
                value = d.pop(key)
                sub = dict(value) if isinstance(value, dict) else value
                if isinstance(sub, dict):
                    for tup_key in ("context_len_range", "split_counts"):
                        if tup_key in sub and sub[tup_key] is not None:
                            sub[tup_key] = tuple(sub[tup_key])
                    kwargs[key] = cls(**sub)
                else:
                    kwargs[key] = sub
        for tup_key in ("split_ratios", "split_counts"):
            if tup_key in d and d[tup_key] is not None:
                d[tup_key] = tuple(d[tup_key])
        kwargs.update(d)
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad run config: {exc}") from exc


@dataclass
class RunReport:
    config: dict
    per_seed: list[dict]
    test_mean: dict[str, float]
    test_std: dict[str, float]
    wall_clock_sec: float
    output_dir: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# --------------------------------------------------------------------------
# Deterministic derived streams
# --------------------------------------------------------------------------

def derive_seed(*parts) -> int:
    """Stable integer seed from a mixed key (ints and strings)."""
    acc = 0
    for part in parts:
        acc = zlib.crc32(repr(part).encode(), acc)
    return acc


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def resolve_output_dir(output_dir: str | Path) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    path = Path(output_dir)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


# --------------------------------------------------------------------------
# Data assembly
# --------------------------------------------------------------------------

@dataclass
class RunData:
    train: Pools
    valid: Pools
    test: Pools
    vocab_size: int
    max_len: int


def prepare_data(config: RunConfig) -> RunData:
    if config.dataset_path is not None:
        loaded = load_jsonl(config.dataset_path)
        pools, vocab_size = loaded.pools, loaded.vocab_size
    else:
        pools = generate_corpus(config.corpus)
        vocab_size = corpus_layout(config.corpus).vocab_size
    train, valid, test = split_pools(
        pools, seed=config.seed, ratios=config.split_ratios, counts=config.split_counts
    )
    prompt_len = max(len(t) for t in TEMPLATES.values())
    max_len = max_context_len(pools) + max(prompt_len, len(get_template(config.prompt)))
    _check_pools(config, train, valid, test)
    return RunData(train=train, valid=valid, test=test, vocab_size=vocab_size, max_len=max_len)


def _check_pools(config: RunConfig, train: Pools, valid: Pools, test: Pools) -> None:
    n = config.episode.n_way
    if config.mode == "zero_shot":
        if len(train) < 2 * n:
            raise ConfigurationError(
                f"zero-shot training needs >= {2 * n} train labels for disjoint pairs, got {len(train)}"
            )
    elif len(train) < n:
        raise ConfigurationError(f"few-shot training needs >= {n} train labels, got {len(train)}")
    for name, pool in (("validation", valid), ("test", test)):
        if len(pool) < n:
            raise ConfigurationError(f"{name} split has {len(pool)} labels, episode needs {n}")


def encoder_config(config: RunConfig, data: RunData) -> EncoderConfig:
    return EncoderConfig(
        vocab_size=data.vocab_size,
        max_len=data.max_len,
        num_layers=config.encoder.num_layers,
        num_heads=config.encoder.num_heads,
        hidden_dim=config.encoder.hidden_dim,
        prompt_template=config.prompt,
    )


def _eval_episodes(config: RunConfig, pool: Pools, stream: str, count: int) -> list:
    """Evaluation episodes, fixed by the base seed (identical across the
    per-seed models of one run and across sweep variants)."""
    spec = config.episode
    episodes = []
    for i in range(count):
        rng = rng_for(config.seed, stream, i)
        episodes.append(sample_task(pool, spec, rng, task_id=i))
    return episodes


def _evaluate(learner: MetaLearner, config: RunConfig, episodes, stream: str) -> list[dict]:
    records = []
    for i, task in enumerate(episodes):
        if config.mode == "zero_shot":
            record = learner.evaluate_zero_shot(task, kmeans_seed=derive_seed(config.seed, stream, "km", i))
        else:
            record = learner.evaluate_few_shot(task)
        records.append({k: record[k] for k in METRIC_KEYS})
    return records


def _mean_record(records: list[dict]) -> dict[str, float]:
    return {k: float(np.mean([r[k] for r in records])) for k in METRIC_KEYS}


# --------------------------------------------------------------------------
# Single-seed training loops
# --------------------------------------------------------------------------

def _build_learner(config: RunConfig, data: RunData, seed: int) -> MetaLearner:
    torch.manual_seed(seed)
    model = TriggerPromptEncoder(encoder_config(config, data))
    return MetaLearner(
        model,
        meta_config=config.meta,
        loss_config=config.loss,
        mmd_config=config.mmd,
        template=config.prompt,
        feature_mode=config.feature_mode,
    )


def _snapshot(learner: MetaLearner) -> dict:
    return {
        "params": {k: v.detach().clone() for k, v in learner.model.state_dict().items()},
        "alpha": learner.schedule.alpha.detach().clone(),
    }


def _restore(learner: MetaLearner, snap: dict) -> None:
    learner.model.load_state_dict(snap["params"])
    with torch.no_grad():
        learner.schedule.alpha.copy_(snap["alpha"])


def _train_one_seed(config: RunConfig, data: RunData, seed: int, out_dir: Path, resume: bool) -> dict:
    learner = _build_learner(config, data, seed)
    val_eps = _eval_episodes(config, data.valid, "val", config.val_episodes)
    runlog = out_dir / f"runlog_seed{seed}.jsonl"
    state_path = out_dir / f"last_seed{seed}.pt"

    start_it = 0
    records: list[dict] = []
    best = {"f1": -1.0, "iteration": 0, "snap": _snapshot(learner)}
    if resume and state_path.exists():
        start_it, best = _load_train_state(learner, state_path)
        records = _read_runlog(runlog, start_it)
    _write_runlog(runlog, records)

    total = config.meta.total_iterations
    for it in range(start_it + 1, total + 1):
        rng = rng_for(seed, "train", it)
        if config.mode == "zero_shot":
            metrics = learner.zero_shot_meta_step(
                data.train, config.episode, rng, task_id=it * config.meta.tasks_per_meta_batch
            )
        else:
            tasks = [
                sample_task(
                    data.train, config.episode, rng, task_id=it * config.meta.tasks_per_meta_batch + j
                )
                for j in range(config.meta.tasks_per_meta_batch)
            ]
            metrics = learner.meta_step(tasks)
            metrics["task_ids"] = [t.task_id for t in tasks]
        record = {"iteration": it, **metrics}
        if it % config.meta.validate_every == 0 or it == total:
            val_records = _evaluate(learner, config, val_eps, "val")
            val_mean = _mean_record(val_records)
            record["val"] = val_mean
            if val_mean["f1"] > best["f1"]:
                best = {"f1": val_mean["f1"], "iteration": it, "snap": _snapshot(learner)}
            _save_train_state(learner, state_path, it, best)
        records.append(record)
        _append_runlog(runlog, record)

    _restore(learner, best["snap"])
    return _finish_seed(config, data, learner, seed, out_dir, records, best)


def _train_one_seed_supervised(
    config: RunConfig, data: RunData, seed: int, out_dir: Path, resume: bool
) -> dict:
    """The no-meta-learner variant: pooled supervised training over all train
    labels, episodic fine-tuning only at evaluation time."""
    learner = _build_learner(config, data, seed)
    model = learner.model
    train_labels = sorted(data.train)
    dense = {lbl: i for i, lbl in enumerate(train_labels)}
    examples = [ex for lbl in train_labels for ex in data.train[lbl]]
    labels = np.asarray([dense[ex.label] for ex in examples])

    head = new_verbalizer(learner.feat_dim, len(train_labels))
    opt = torch.optim.AdamW(
        list(model.parameters()) + list(head.values()),
        lr=config.meta.inner_lr,
        weight_decay=0.0,
    )
    val_eps = _eval_episodes(config, data.valid, "val", config.val_episodes)
    runlog = out_dir / f"runlog_seed{seed}.jsonl"

    # match the per-task gradient-step budget of one meta training stream
    total_steps = config.meta.total_iterations * config.meta.inner_steps
    check_every = config.meta.validate_every * config.meta.inner_steps
    best = {"f1": -1.0, "iteration": 0, "snap": _snapshot(learner)}
    records: list[dict] = []
    _write_runlog(runlog, records)
    cap = config.meta.inner_batch_cap
    for step in range(1, total_steps + 1):
        rng = rng_for(seed, "sup", step)
        idx = rng.choice(len(examples), size=min(cap, len(examples)), replace=False)
        batch_examples = [examples[i] for i in idx]
        batch_labels = torch.tensor(labels[idx], dtype=torch.long)
        batch = make_batch(batch_examples, config.prompt, model.config.max_len)
        params = dict(model.named_parameters())
        params.update(head)
        breakdown = learner._batch_breakdown(params, batch, batch_labels)
        opt.zero_grad(set_to_none=True)
        breakdown.total.backward()
        opt.step()
        if step % check_every == 0 or step == total_steps:
            val_records = _evaluate(learner, config, val_eps, "val")
            val_mean = _mean_record(val_records)
            record = {"iteration": step, "supervised": breakdown.as_dict(), "val": val_mean}
            records.append(record)
            _append_runlog(runlog, record)
            if val_mean["f1"] > best["f1"]:
                best = {"f1": val_mean["f1"], "iteration": step, "snap": _snapshot(learner)}

    _restore(learner, best["snap"])
    return _finish_seed(config, data, learner, seed, out_dir, records, best)


def _finish_seed(
    config: RunConfig,
    data: RunData,
    learner: MetaLearner,
    seed: int,
    out_dir: Path,
    records: list[dict],
    best: dict,
) -> dict:
    test_eps = _eval_episodes(config, data.test, "test", config.test_episodes)
    test_records = _evaluate(learner, config, test_eps, "test")
    _write_metric_records(out_dir / f"metrics_seed{seed}.jsonl", test_records)
    ckpt = Checkpoint(
        encoder_config=learner.model.config,
        params={k: v.detach().clone() for k, v in learner.model.state_dict().items()},
        alpha=learner.schedule.alpha,
        alpha_groups=learner.schedule.group_names,
        template=config.prompt,
        feature_mode=config.feature_mode,
        extra={
            "run_config": config.to_dict(),
            "seed": seed,
            "best_iteration": best["iteration"],
            "best_val_f1": best["f1"],
        },
    )
    ckpt_path = save_checkpoint(ckpt, out_dir / f"best_seed{seed}.pt")
    loss_curve = [
        {
            "iteration": r["iteration"],
            "tasks": r.get("per_task", []),
            **({"val": r["val"]} if "val" in r else {}),
        }
        for r in records
    ]
    return {
        "seed": seed,
        "best_iteration": best["iteration"],
        "best_val_f1": best["f1"],
        "skipped_steps": learner.skipped_steps,
        "test": _mean_record(test_records),
        "test_episodes": test_records,
        "checkpoint": str(ckpt_path),
        "loss_curve": loss_curve,
    }


# -- run-state / log helpers -------------------------------------------------

def _save_train_state(learner: MetaLearner, path: Path, iteration: int, best: dict) -> None:
    torch.save(
        {
            "iteration": iteration,
            "model": learner.model.state_dict(),
            "alpha": learner.schedule.alpha.detach().clone(),
            "meta_opt": learner.meta_opt.state_dict(),
            "alpha_opt": learner.alpha_opt.state_dict() if learner.alpha_opt else None,
            "skipped_steps": learner.skipped_steps,
            "best": {"f1": best["f1"], "iteration": best["iteration"], "snap": best["snap"]},
        },
        path,
    )


def _load_train_state(learner: MetaLearner, path: Path) -> tuple[int, dict]:
    state = torch.load(path, map_location="cpu", weights_only=True)
    learner.model.load_state_dict(state["model"])
    with torch.no_grad():
        learner.schedule.alpha.copy_(state["alpha"])
    learner.meta_opt.load_state_dict(state["meta_opt"])
    if learner.alpha_opt is not None and state["alpha_opt"] is not None:
        learner.alpha_opt.load_state_dict(state["alpha_opt"])
    learner.skipped_steps = state["skipped_steps"]
    return state["iteration"], dict(state["best"])


def _write_runlog(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def _append_runlog(path: Path, record: dict) -> None:
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def _read_runlog(path: Path, up_to: int) -> list[dict]:
    if not path.exists():
        return []
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("iteration", 0) <= up_to:
                records.append(rec)
    return records


def _write_metric_records(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({k: rec[k] for k in METRIC_KEYS}) + "\n")


# --------------------------------------------------------------------------
# Public entry points
# --------------------------------------------------------------------------

def run_train(config: RunConfig, resume: bool = False) -> RunReport:
    """Full training run: ``num_seeds`` models, best-validation checkpoints,
    test metrics as mean +- std across seeds."""
    torch.set_num_threads(1)
    started = time.perf_counter()
    out_dir = resolve_output_dir(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = prepare_data(config)
    per_seed = []
    for i in range(config.num_seeds):
        seed = config.seed + i
        if config.ablate_meta:
            per_seed.append(_train_one_seed_supervised(config, data, seed, out_dir, resume))
        else:
            per_seed.append(_train_one_seed(config, data, seed, out_dir, resume))
    test_mean = {k: float(np.mean([s["test"][k] for s in per_seed])) for k in METRIC_KEYS}
    test_std = {k: float(np.std([s["test"][k] for s in per_seed])) for k in METRIC_KEYS}
    report = RunReport(
        config=config.to_dict(),
        per_seed=per_seed,
        test_mean=test_mean,
        test_std=test_std,
        wall_clock_sec=time.perf_counter() - started,
        output_dir=str(out_dir),
    )
    _write_report(report, out_dir)
    return report


def _write_report(report: RunReport, out_dir: Path) -> None:
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    lines = [
        "run report",
        f"  mode: {report.config['mode']}  prompt: {report.config['prompt']}  "
        f"seed: {report.config['seed']}  seeds: {report.config['num_seeds']}",
        f"  output: {report.output_dir}",
        f"  wall clock: {report.wall_clock_sec:.1f}s",
        "  test metrics (mean +- std over seeds):",
    ]
    for k in METRIC_KEYS:
        lines.append(f"    {k:12s} {report.test_mean[k]:.4f} +- {report.test_std[k]:.4f}")
    for s in report.per_seed:
        lines.append(
            f"  seed {s['seed']}: best iteration {s['best_iteration']} "
            f"(val f1 {s['best_val_f1']:.4f}), test f1 {s['test']['f1']:.4f}"
        )
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def evaluate_checkpoint(checkpoint_path: str | Path, test_episodes: int | None = None) -> dict:
    """Recompute test-episode metrics from a saved checkpoint.

    Episodes and k-means seeds are re-derived from the config stored in the
    checkpoint, so the result must match the original report bit-exactly.
    """
    torch.set_num_threads(1)
    ckpt = load_checkpoint(checkpoint_path)
    config = config_from_dict(ckpt.extra["run_config"])
    if test_episodes is not None:
        config = replace(config, test_episodes=test_episodes)
    data = prepare_data(config)
    model = build_model(ckpt)
    learner = MetaLearner(
        model,
        meta_config=config.meta,
        loss_config=config.loss,
        mmd_config=config.mmd,
        template=ckpt.template,
        feature_mode=ckpt.feature_mode,
    )
    with torch.no_grad():
        learner.schedule.alpha.copy_(ckpt.alpha)
    episodes = _eval_episodes(config, data.test, "test", config.test_episodes)
    records = _evaluate(learner, config, episodes, "test")
    return {"test": _mean_record(records), "episodes": records, "config": config.to_dict()}


def run_sweep(config: RunConfig, parameter: str, values: list) -> dict:
    """One run per value with shared seeds and shared evaluation episodes."""
    if parameter not in SWEEPABLE:
        raise ConfigurationError(f"cannot sweep {parameter!r}; choose from {SWEEPABLE}")
    if not values:
        warnings.warn("run_sweep called with no values; nothing to do")
        return {"parameter": parameter, "rows": [], "reports": []}
    reports = []
    rows = []
    for value in values:
        sub = _apply_sweep_value(config, parameter, value)
        sub = replace(sub, output_dir=str(Path(config.output_dir) / f"{parameter}_{value}"))
        report = run_train(sub)
        reports.append(report)
        rows.append({"parameter": parameter, "value": value, **report.test_mean})
    out_dir = resolve_output_dir(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"parameter": parameter, "rows": rows}
    (out_dir / "sweep_summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    _write_plot_data(out_dir / "sweep_plot.csv", rows)
    return {"parameter": parameter, "rows": rows, "reports": [r.to_dict() for r in reports]}


def _apply_sweep_value(config: RunConfig, parameter: str, value) -> RunConfig:
    if parameter == "lambda_c":
        return replace(config, loss=replace(config.loss, lambda_c=float(value)))
    if parameter == "prompt":
        return replace(config, prompt=str(value))
    if parameter == "inner_steps":
        return replace(config, meta=replace(config.meta, inner_steps=int(value)))
    if parameter == "k_shot":
        if config.mode == "zero_shot":
            raise ConfigurationError("cannot sweep k_shot in zero_shot mode")
        return replace(config, episode=replace(config.episode, k_shot=int(value)))
    raise ConfigurationError(f"cannot sweep {parameter!r}")


def _write_plot_data(path: Path, rows: list[dict]) -> None:
    header = ["value", *METRIC_KEYS]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join([str(row["value"])] + [f"{row[k]:.6f}" for k in METRIC_KEYS]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


ABLATION_VARIANTS = {
    "trigger": {"feature_mode": "v_only"},
    "verbalizer": {"feature_mode": "t_only"},
    "meta_learner": {"ablate_meta": True},
}


def run_ablation(config: RunConfig, components: list[str] | None = None) -> dict:
    """Train the full model plus one variant per removed component."""
    components = list(components) if components is not None else list(ABLATABLE)
    for c in components:
        if c not in ABLATION_VARIANTS:
            raise ConfigurationError(f"unknown ablation component {c!r}; choose from {ABLATABLE}")
    rows = []
    variants = [("full", {})] + [(f"no_{c}", ABLATION_VARIANTS[c]) for c in components]
    for name, overrides in variants:
        sub = replace(config, output_dir=str(Path(config.output_dir) / name), **overrides)
        report = run_train(sub)
        rows.append(
            {
                "variant": name,
                **{k: report.test_mean[k] for k in METRIC_KEYS},
                **{f"{k}_std": report.test_std[k] for k in METRIC_KEYS},
            }
        )
    out_dir = resolve_output_dir(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(json.dumps({"rows": rows}, indent=2), encoding="utf-8")
    return {"rows": rows}


def export_features(
    checkpoint_path: str | Path, output_path: str | Path, episodes: int | None = None
) -> dict:
    """Write per-example (x, y, gold label, cluster id) rows for the test
    episodes of a checkpoint, using the same clustering the metrics used."""
    torch.set_num_threads(1)
    ckpt = load_checkpoint(checkpoint_path)
    config = config_from_dict(ckpt.extra["run_config"])
    if episodes is not None:
        config = replace(config, test_episodes=episodes)
    data = prepare_data(config)
    model = build_model(ckpt)
    learner = MetaLearner(
        model, meta_config=config.meta, loss_config=config.loss, mmd_config=config.mmd,
        template=ckpt.template, feature_mode=ckpt.feature_mode,
    )
    eps = _eval_episodes(config, data.test, "test", config.test_episodes)
    output_path = resolve_output_dir(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with Path(output_path).open("w", encoding="utf-8") as fh:
        fh.write("episode,x,y,gold,cluster\n")
        for i, task in enumerate(eps):
            feats = learner.features(task.query)
            gold = task.local_labels(task.query)
            result = matching.kmeans(feats, task.n_way, seed=derive_seed(config.seed, "test", "km", i))
            coords = matching.project_2d(feats)
            for j in range(len(task.query)):
                fh.write(
                    f"{i},{coords[j, 0]:.6f},{coords[j, 1]:.6f},{gold[j]},{int(result.cluster_ids[j])}\n"
                )
                rows += 1
    return {"rows": rows, "path": str(output_path)}


__all__ = [
    "OUTPUT_ROOT_ENV",
    "SWEEPABLE",
    "ABLATABLE",
    "EncoderArch",
    "RunConfig",
    "config_from_dict",
    "RunReport",
    "derive_seed",
    "rng_for",
    "resolve_output_dir",
    "RunData",
    "prepare_data",
    "encoder_config",
    "run_train",
    "evaluate_checkpoint",
    "run_sweep",
    "run_ablation",
    "export_features",
]
