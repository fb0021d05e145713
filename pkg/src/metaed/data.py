"""Examples, synthetic corpus generation, JSONL ingestion and episode sampling.

An event-detection example is a pre-tokenized context, a half-open trigger
span into it, and an integer event-type label.  Episodes (N-way K-shot tasks)
are sampled from label-keyed pools; zero-shot training additionally needs
pairs of tasks with disjoint label sets.

Everything here is a pure function of explicit ``numpy.random.Generator``
state, so repeated calls with equal seeds produce identical corpora and
episodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError, SamplingError

# Reserved token ids shared by the synthetic corpus and the prompt templates.
PAD_ID = 0
MASK_ID = 1
PROMPT_WORDS = {
    "a": 2,
    "event": 3,
    "this": 4,
    "text": 5,
    "describes": 6,
    "topic": 7,
    "is": 8,
    "about": 9,
    "[": 10,
    "]": 11,
}
NUM_RESERVED = 12

Pools = dict[int, list["Example"]]


@dataclass(frozen=True)
class Example:
    """One supervision unit: context token ids, trigger span, event label."""

    tokens: tuple[int, ...]
    trigger_span: tuple[int, int]
    label: int
    raw_text: str | None = None

    def __post_init__(self):
        start, end = self.trigger_span
        if not (0 <= start < end <= len(self.tokens)):
            raise ConfigurationError(
                f"trigger span [{start}, {end}) out of range for context length {len(self.tokens)}"
            )
        if self.label < 0:
            raise ConfigurationError(f"label must be >= 0, got {self.label}")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class EpisodeSpec:
    """Shape of one episodic task. ``k_shot=0`` is the zero-shot setting."""

    n_way: int
    k_shot: int
    query_per_class: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 2:
            raise ConfigurationError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 0:
            raise ConfigurationError(f"k_shot must be >= 0, got {self.k_shot}")
        if self.query_per_class < 1:
            raise ConfigurationError(f"query_per_class must be >= 1, got {self.query_per_class}")


@dataclass(frozen=True)
class Task:
    """A sampled episode: support/query example lists plus the label remap.

    ``label_map`` sends global label ids to episode-local class indices
    0..N-1, assigned in ascending order of global id.
    """

    support: tuple[Example, ...]
    query: tuple[Example, ...]
    label_map: dict[int, int]
    task_id: int = 0

    @property
    def n_way(self) -> int:
        return len(self.label_map)

    def local_labels(self, examples: tuple[Example, ...]) -> list[int]:
        return [self.label_map[ex.label] for ex in examples]


@dataclass(frozen=True)
class CorpusSpec:
    """Recipe for the synthetic event corpus.

    Each event type owns a disjoint block of ``triggers_per_type`` signature
    tokens; a context is background noise with one signature token planted at
    a random position.  ``trigger_noise`` is the probability that the planted
    token is borrowed from a *different* type's signature set (the label is
    kept, so noise produces trigger/label ambiguity).
    """

    num_event_types: int = 15
    triggers_per_type: int = 2
    background_vocab: int = 50
    context_len_range: tuple[int, int] = (8, 16)
    examples_per_type: int = 60
    trigger_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_event_types < 1 or self.triggers_per_type < 1:
            raise ConfigurationError("num_event_types and triggers_per_type must be >= 1")
        if self.background_vocab < 1:
            raise ConfigurationError("background_vocab must be >= 1")
        lo, hi = self.context_len_range
        if not (1 <= lo <= hi):
            raise ConfigurationError(f"invalid context_len_range {self.context_len_range}")
        if self.examples_per_type < 1:
            raise ConfigurationError("examples_per_type must be >= 1")
        if not 0.0 <= self.trigger_noise <= 1.0:
            raise ConfigurationError(f"trigger_noise must be in [0, 1], got {self.trigger_noise}")
        if self.trigger_noise > 0.0 and self.num_event_types < 2:
            raise ConfigurationError("trigger_noise > 0 needs at least 2 event types")


@dataclass(frozen=True)
class VocabLayout:
    """Where the reserved, background and trigger token blocks live."""

    background_size: int
    num_types: int
    triggers_per_type: int

    @property
    def background_start(self) -> int:
        return NUM_RESERVED

    @property
    def trigger_start(self) -> int:
        return NUM_RESERVED + self.background_size

    @property
    def vocab_size(self) -> int:
        return self.trigger_start + self.num_types * self.triggers_per_type

    def trigger_ids(self, event_type: int) -> range:
        base = self.trigger_start + event_type * self.triggers_per_type
        return range(base, base + self.triggers_per_type)

    def type_of_trigger(self, token: int) -> int | None:
        if token < self.trigger_start or token >= self.vocab_size:
            return None
        return (token - self.trigger_start) // self.triggers_per_type


def corpus_layout(spec: CorpusSpec) -> VocabLayout:
    return VocabLayout(spec.background_vocab, spec.num_event_types, spec.triggers_per_type)


def generate_corpus(spec: CorpusSpec) -> Pools:
    """Generate the synthetic corpus; deterministic in ``spec.seed``."""
    layout = corpus_layout(spec)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.context_len_range
    pools: Pools = {}
    for label in range(spec.num_event_types):
        examples = []
        for _ in range(spec.examples_per_type):
            length = int(rng.integers(lo, hi + 1))
            tokens = rng.integers(
                layout.background_start, layout.background_start + spec.background_vocab, size=length
            )
            pos = int(rng.integers(0, length))
            source_type = label
            if spec.trigger_noise > 0.0 and rng.random() < spec.trigger_noise:
                others = [t for t in range(spec.num_event_types) if t != label]
                source_type = int(rng.choice(others))
            trig = int(rng.choice(list(layout.trigger_ids(source_type))))
            tokens[pos] = trig
            examples.append(
                Example(tokens=tuple(int(t) for t in tokens), trigger_span=(pos, pos + 1), label=label)
            )
        pools[label] = examples
    return pools


# --------------------------------------------------------------------------
# JSONL ingestion / export
# --------------------------------------------------------------------------

@dataclass
class LoadedDataset:
    """Pools plus the string<->id indexes built while loading a JSONL file."""

    pools: Pools
    label_to_id: dict[str, int]
    token_to_id: dict[str, int]

    @property
    def vocab_size(self) -> int:
        return NUM_RESERVED + len(self.token_to_id)


def load_jsonl(path: str | Path, label_index: dict[str, int] | str = "build") -> LoadedDataset:
    """Load a span-annotated JSONL dataset.

    Each line must be a JSON object with fields ``tokens`` (list of strings),
    ``trigger_start``, ``trigger_end`` (half-open span) and ``label``
    (string).  Token and label strings are mapped to dense integer ids in
    sorted order; pass an explicit ``label_index`` to pin label ids.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"dataset file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"line {lineno}: invalid JSON ({exc})") from exc
            for key in ("tokens", "trigger_start", "trigger_end", "label"):
                if key not in rec:
                    raise IngestionError(f"line {lineno}: missing field '{key}'")
            tokens = rec["tokens"]
            if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
                raise IngestionError(f"line {lineno}: 'tokens' must be a non-empty list of strings")
            start, end = rec["trigger_start"], rec["trigger_end"]
            if not (isinstance(start, int) and isinstance(end, int)):
                raise IngestionError(f"line {lineno}: trigger_start/trigger_end must be integers")
            if not (0 <= start < end <= len(tokens)):
                raise IngestionError(
                    f"line {lineno}: trigger span [{start}, {end}) out of range for {len(tokens)} tokens"
                )
            if not isinstance(rec["label"], str):
                raise IngestionError(f"line {lineno}: 'label' must be a string")
            records.append((lineno, tokens, start, end, rec["label"]))
    if not records:
        raise IngestionError(f"{path}: file contains no records")

    if label_index == "build":
        labels = sorted({r[4] for r in records})
        label_to_id = {name: i for i, name in enumerate(labels)}
    else:
        label_to_id = dict(label_index)
        for rec in records:
            if rec[4] not in label_to_id:
                raise IngestionError(f"line {rec[0]}: unknown label '{rec[4]}'")

    token_names = sorted({t for r in records for t in r[1]})
    token_to_id = {name: NUM_RESERVED + i for i, name in enumerate(token_names)}

    pools: Pools = {i: [] for i in sorted(label_to_id.values())}
    for _lineno, tokens, start, end, label in records:
        pools[label_to_id[label]].append(
            Example(
                tokens=tuple(token_to_id[t] for t in tokens),
                trigger_span=(start, end),
                label=label_to_id[label],
                raw_text=" ".join(tokens),
            )
        )
    return LoadedDataset(pools=pools, label_to_id=label_to_id, token_to_id=token_to_id)


def save_jsonl(
    pools: Pools,
    path: str | Path,
    token_names: dict[int, str] | None = None,
    label_names: dict[int, str] | None = None,
) -> int:
    """Export pools to the same JSONL format ``load_jsonl`` reads.

    Without explicit name tables, token id ``t`` is written as ``"t<t>"``
    and label id ``l`` as ``"type<l>"`` so that synthetic corpora round-trip.
    Returns the number of records written.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for label in sorted(pools):
            for ex in pools[label]:
                rec = {
                    "tokens": [
                        token_names[t] if token_names is not None else f"t{t:05d}" for t in ex.tokens
                    ],
                    "trigger_start": ex.trigger_span[0],
                    "trigger_end": ex.trigger_span[1],
                    "label": label_names[label] if label_names is not None else f"type{label:04d}",
                }
                fh.write(json.dumps(rec) + "\n")
                count += 1
    return count


# --------------------------------------------------------------------------
# Label splits and episode sampling
# --------------------------------------------------------------------------

def split_pools(
    pools: Pools,
    seed: int,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    counts: tuple[int, int, int] | None = None,
) -> tuple[Pools, Pools, Pools]:
    """Split pools into train/valid/test with *disjoint label sets*.

    The split is by label, not by example: every label lands wholly in one
    of the three splits.  ``counts`` overrides the ratio-derived label
    counts when an exact split is needed.
    """
    labels = sorted(pools)
    n = len(labels)
    if counts is None:
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigurationError(f"split ratios must sum to 1, got {ratios}")
        n_valid = max(1, round(ratios[1] * n)) if ratios[1] > 0 else 0
        n_test = max(1, round(ratios[2] * n)) if ratios[2] > 0 else 0
        n_train = n - n_valid - n_test
    else:
        n_train, n_valid, n_test = counts
    if n_train < 1 or n_train + n_valid + n_test != n:
        raise ConfigurationError(
            f"label split ({n_train}, {n_valid}, {n_test}) incompatible with {n} labels"
        )
    rng = np.random.default_rng(seed)
    order = [labels[i] for i in rng.permutation(n)]
    train = {lbl: pools[lbl] for lbl in sorted(order[:n_train])}
    valid = {lbl: pools[lbl] for lbl in sorted(order[n_train : n_train + n_valid])}
    test = {lbl: pools[lbl] for lbl in sorted(order[n_train + n_valid :])}
    return train, valid, test


def _eligible_labels(pool: Pools, per_label: int) -> list[int]:
    return sorted(lbl for lbl, exs in pool.items() if len(exs) >= per_label)


def sample_task(pool: Pools, spec: EpisodeSpec, rng: np.random.Generator, task_id: int = 0) -> Task:
    """Sample one N-way K-shot task without replacement within the task."""
    need = spec.k_shot + spec.query_per_class
    eligible = _eligible_labels(pool, need)
    if len(eligible) < spec.n_way:
        raise SamplingError(
            f"need {spec.n_way} labels with >= {need} examples each, "
            f"only {len(eligible)} of {len(pool)} qualify"
        )
    chosen = sorted(int(l) for l in rng.choice(eligible, size=spec.n_way, replace=False))
    label_map = {lbl: i for i, lbl in enumerate(chosen)}
    support: list[Example] = []
    query: list[Example] = []
    for lbl in chosen:
        exs = pool[lbl]
        idx = rng.choice(len(exs), size=need, replace=False)
        support.extend(exs[i] for i in idx[: spec.k_shot])
        query.extend(exs[i] for i in idx[spec.k_shot :])
    return Task(support=tuple(support), query=tuple(query), label_map=label_map, task_id=task_id)


def sample_disjoint_pair(
    pools: Pools,
    spec: EpisodeSpec,
    rng: np.random.Generator,
    support_shots: int | None = None,
    task_id: int = 0,
) -> tuple[Task, Task]:
    """Sample a (support task, query task) pair with disjoint label sets.

    Used by zero-shot training, where the inner loop adapts on labeled
    examples from event types the query task never sees.  The support task
    carries ``support_shots`` examples per class (defaulting to
    ``query_per_class`` when the episode itself is zero-shot) and an empty
    query; the query task has an empty support.
    """
    shots = support_shots if support_shots is not None else (spec.k_shot or spec.query_per_class)
    if shots < 1:
        raise ConfigurationError("support task of a disjoint pair needs at least 1 shot per class")
    need = max(shots, spec.query_per_class)
    eligible = _eligible_labels(pools, need)
    if len(eligible) < 2 * spec.n_way:
        raise SamplingError(
            f"disjoint pair needs {2 * spec.n_way} labels with >= {need} examples, "
            f"only {len(eligible)} qualify"
        )
    chosen = rng.choice(eligible, size=2 * spec.n_way, replace=False)
    sup_labels = sorted(int(l) for l in chosen[: spec.n_way])
    qry_labels = sorted(int(l) for l in chosen[spec.n_way :])

    support_task = _one_sided_task(pools, sup_labels, shots, rng, side="support", task_id=task_id)
    query_task = _one_sided_task(
        pools, qry_labels, spec.query_per_class, rng, side="query", task_id=task_id
    )
    return support_task, query_task


def _one_sided_task(
    pools: Pools, labels: list[int], per_class: int, rng: np.random.Generator, side: str, task_id: int
) -> Task:
    label_map = {lbl: i for i, lbl in enumerate(labels)}
    picked: list[Example] = []
    for lbl in labels:
        exs = pools[lbl]
        idx = rng.choice(len(exs), size=per_class, replace=False)
        picked.extend(exs[i] for i in idx)
    if side == "support":
        return Task(support=tuple(picked), query=(), label_map=label_map, task_id=task_id)
    return Task(support=(), query=tuple(picked), label_map=label_map, task_id=task_id)


def max_context_len(pools: Pools) -> int:
    return max((len(ex) for exs in pools.values() for ex in exs), default=0)


__all__ = [
    "PAD_ID",
    "MASK_ID",
    "PROMPT_WORDS",
    "NUM_RESERVED",
    "Example",
    "EpisodeSpec",
    "Task",
    "CorpusSpec",
    "VocabLayout",
    "corpus_layout",
    "generate_corpus",
    "LoadedDataset",
    "load_jsonl",
    "save_jsonl",
    "split_pools",
    "sample_task",
    "sample_disjoint_pair",
    "max_context_len",
]
