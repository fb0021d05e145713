"""Prompt-based trigger-aware encoder.

A small transformer trained from scratch stands in for a pretrained LM.  The
input to a forward pass is a cloze prompt (one masked slot) prepended to the
example's context tokens.  Four quantities are read off a single pass:

* ``slot_distribution`` ``v`` — softmax over the vocabulary at the slot
  position, produced by a tied-embedding output head;
* ``trigger_probs`` ``p`` — per context token, the probability of being a
  trigger word (binary head on the token features);
* attentive trigger weights ``w`` — softmax of ``p`` times the attention
  mass each context token *receives* (summed over query positions, averaged
  over heads, last layer only);
* trigger feature ``t`` — the ``w``-weighted sum of context token features.

The fused event feature ``[v; t]`` feeds both the episodic soft verbalizer
(a per-task linear head under a GELU) and the zero-shot clustering path.

All forward passes are functional: parameters are passed explicitly as a
name->tensor mapping, so adapted copies never touch the module's own state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import MASK_ID, NUM_RESERVED, PAD_ID, PROMPT_WORDS, Example
from .errors import ConfigurationError, ContractError


@dataclass(frozen=True)
class PromptTemplate:
    """A token-level cloze template with exactly one masked slot."""

    id: str
    tokens: tuple[int, ...]

    def __post_init__(self):
        if self.tokens.count(MASK_ID) != 1:
            raise ConfigurationError(
                f"template {self.id!r} must contain exactly one slot marker, "
                f"found {self.tokens.count(MASK_ID)}"
            )

    @property
    def slot_index(self) -> int:
        return self.tokens.index(MASK_ID)

    def __len__(self) -> int:
        return len(self.tokens)


_W = PROMPT_WORDS
TEMPLATES: dict[str, PromptTemplate] = {
    # "A <mask> event"
    "A": PromptTemplate("A", (_W["a"], MASK_ID, _W["event"])),
    # "This text describes a <mask> event"
    "B": PromptTemplate(
        "B", (_W["this"], _W["text"], _W["describes"], _W["a"], MASK_ID, _W["event"])
    ),
    # "This topic is about <mask>"
    "C": PromptTemplate("C", (_W["this"], _W["topic"], _W["is"], _W["about"], MASK_ID)),
    # "[ event <mask> ]"
    "D": PromptTemplate("D", (_W["["], _W["event"], MASK_ID, _W["]"])),
}


def get_template(template: str | PromptTemplate) -> PromptTemplate:
    if isinstance(template, PromptTemplate):
        return template
    try:
        return TEMPLATES[template]
    except KeyError:
        raise ConfigurationError(
            f"unknown prompt template {template!r}; choose from {sorted(TEMPLATES)}"
        ) from None


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    max_len: int
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64
    prompt_template: str = "A"

    def __post_init__(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.vocab_size <= NUM_RESERVED:
            raise ConfigurationError(f"vocab_size must exceed {NUM_RESERVED} reserved ids")
        if self.max_len < 2 or self.num_layers < 1:
            raise ConfigurationError("max_len must be >= 2 and num_layers >= 1")


class EncoderLayer(nn.Module):
    """Pre-norm transformer block that also returns its attention weights."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.ln1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.ln2 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, 4 * dim)
        self.ff2 = nn.Linear(4 * dim, dim)

    def forward(self, x: torch.Tensor, valid: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, t, d = x.shape
        h = self.ln1(x)
        q, k, v = self.qkv(h).reshape(b, t, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        scores = (q @ k.transpose(-2, -1)) / self.head_dim**0.5
        scores = scores.masked_fill(~valid[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        ctx = (attn @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.proj(ctx)
        x = x + self.ff2(F.gelu(self.ff1(self.ln2(x))))
        return x, attn


class TriggerPromptEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        d = config.hidden_dim
        self.tok_emb = nn.Embedding(config.vocab_size, d, padding_idx=PAD_ID)
        self.pos_emb = nn.Embedding(config.max_len, d)
        self.layers = nn.ModuleList(
            EncoderLayer(d, config.num_heads) for _ in range(config.num_layers)
        )
        self.final_ln = nn.LayerNorm(d)
        self.mlm_bias = nn.Parameter(torch.zeros(config.vocab_size))
        self.trigger_head = nn.Linear(d, 2)
        self.param_names = frozenset(name for name, _ in self.named_parameters())

    def forward(self, tokens: torch.Tensor, valid: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns final hidden states [B,T,D] and last-layer attention [B,H,T,T]."""
        positions = torch.arange(tokens.shape[1], device=tokens.device)
        x = self.tok_emb(tokens) + self.pos_emb(positions)[None]
        attn = None
        for layer in self.layers:
            x, attn = layer(x, valid)
        return self.final_ln(x), attn


def parameter_group(name: str) -> str:
    """Layer group a parameter belongs to, for per-group learning rates."""
    parts = name.split(".")
    return ".".join(parts[:2]) if parts[0] == "layers" else parts[0]


def module_parameters(model: TriggerPromptEncoder) -> dict[str, torch.Tensor]:
    return dict(model.named_parameters())


# --------------------------------------------------------------------------
# Batched functional forward
# --------------------------------------------------------------------------

@dataclass
class EncodedBatch:
    """Prompt-prefixed, padded token tensors for a list of examples."""

    tokens: torch.Tensor  # [B, T] long
    valid: torch.Tensor  # [B, T] bool, prompt + context positions
    ctx_mask: torch.Tensor  # [B, T] bool, context positions only
    lengths: torch.Tensor  # [B] long, context lengths
    trigger_targets: torch.Tensor  # [B, Lc_max] long 0/1 (0 at padding)
    prompt_len: int
    slot_index: int

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    @property
    def max_context_len(self) -> int:
        return self.tokens.shape[1] - self.prompt_len


def make_batch(
    examples: Sequence[Example], template: str | PromptTemplate, max_len: int
) -> EncodedBatch:
    template = get_template(template)
    if not examples:
        raise ContractError("cannot encode an empty batch")
    p = len(template)
    lengths = [len(ex) for ex in examples]
    t = p + max(lengths)
    if t > max_len:
        raise ContractError(
            f"prompt ({p}) + context ({max(lengths)}) exceeds max_len {max_len}"
        )
    b = len(examples)
    tokens = torch.full((b, t), PAD_ID, dtype=torch.long)
    valid = torch.zeros(b, t, dtype=torch.bool)
    ctx_mask = torch.zeros(b, t, dtype=torch.bool)
    trig = torch.zeros(b, t - p, dtype=torch.long)
    for i, ex in enumerate(examples):
        tokens[i, :p] = torch.tensor(template.tokens, dtype=torch.long)
        tokens[i, p : p + len(ex)] = torch.tensor(ex.tokens, dtype=torch.long)
        valid[i, : p + len(ex)] = True
        ctx_mask[i, p : p + len(ex)] = True
        s, e = ex.trigger_span
        trig[i, s:e] = 1
    return EncodedBatch(
        tokens=tokens,
        valid=valid,
        ctx_mask=ctx_mask,
        lengths=torch.tensor(lengths, dtype=torch.long),
        trigger_targets=trig,
        prompt_len=p,
        slot_index=template.slot_index,
    )


@dataclass
class BatchOutput:
    """Everything a loss or a matcher needs from one batched forward pass."""

    token_features: torch.Tensor  # [B, Lc_max, D], zero rows at padding
    attention: torch.Tensor  # [B, H, Lc_max, Lc_max] context block of last layer
    slot_distribution: torch.Tensor  # [B, V]
    trigger_logits: torch.Tensor  # [B, Lc_max, 2]
    trigger_probs: torch.Tensor  # [B, Lc_max], zero at padding
    trigger_weights: torch.Tensor  # [B, Lc_max], softmax over real context positions
    trigger_feature: torch.Tensor  # [B, D]
    ctx_valid: torch.Tensor  # [B, Lc_max] bool
    batch: EncodedBatch


def run_batch(
    model: TriggerPromptEncoder, params: Mapping[str, torch.Tensor], batch: EncodedBatch
) -> BatchOutput:
    # episodic extras (the verbalizer) ride along in `params` but are not
    # module parameters; functional_call only accepts names the module owns
    call_params = {k: v for k, v in params.items() if k in model.param_names}
    hidden, attn = torch.func.functional_call(model, call_params, (batch.tokens, batch.valid))
    p0 = batch.prompt_len
    ctx_valid = batch.ctx_mask[:, p0:]
    token_features = hidden[:, p0:] * ctx_valid[..., None]

    # Tied-embedding slot head: logits over the full vocabulary at the slot.
    emb = params["tok_emb.weight"]
    slot_logits = hidden[:, batch.slot_index] @ emb.T + params["mlm_bias"]
    slot_distribution = torch.softmax(slot_logits, dim=-1)

    trigger_logits = token_features @ params["trigger_head.weight"].T + params["trigger_head.bias"]
    trigger_probs = torch.softmax(trigger_logits, dim=-1)[..., 1] * ctx_valid

    attn_ctx = attn[:, :, p0:, p0:]
    attn_ctx = attn_ctx * ctx_valid[:, None, None, :] * ctx_valid[:, None, :, None]
    w = attentive_weights(attn_ctx, trigger_probs, ctx_valid)
    t_feat = torch.einsum("bl,bld->bd", w, token_features)
    return BatchOutput(
        token_features=token_features,
        attention=attn_ctx,
        slot_distribution=slot_distribution,
        trigger_logits=trigger_logits,
        trigger_probs=trigger_probs,
        trigger_weights=w,
        trigger_feature=t_feat,
        ctx_valid=ctx_valid,
        batch=batch,
    )


def received_attention(attention: torch.Tensor) -> torch.Tensor:
    """Attention mass each key position receives: sum over query positions,
    averaged over heads.  ``attention`` is [..., H, L, L] with rows indexed
    by query and columns by key."""
    return attention.sum(dim=-2).mean(dim=-2)


def attentive_weights(
    attention: torch.Tensor, trigger_probs: torch.Tensor, ctx_valid: torch.Tensor | None = None
) -> torch.Tensor:
    """Softmax of (trigger probability x received attention) per token."""
    scores = trigger_probs * received_attention(attention)
    if ctx_valid is not None:
        scores = scores.masked_fill(~ctx_valid, float("-inf"))
    return torch.softmax(scores, dim=-1)


# --------------------------------------------------------------------------
# Single-example operations
# --------------------------------------------------------------------------

@dataclass
class EncoderOutput:
    """Per-example view: tensors restricted to the context span."""

    token_features: torch.Tensor  # [Lc, D]
    attention: torch.Tensor  # [H, Lc, Lc]
    slot_distribution: torch.Tensor  # [V]
    trigger_probs: torch.Tensor  # [Lc]


def encode(
    model: TriggerPromptEncoder,
    params: Mapping[str, torch.Tensor],
    example: Example,
    template: str | PromptTemplate,
) -> EncoderOutput:
    batch = make_batch([example], template, model.config.max_len)
    out = run_batch(model, params, batch)
    lc = len(example)
    return EncoderOutput(
        token_features=out.token_features[0, :lc],
        attention=out.attention[0, :, :lc, :lc],
        slot_distribution=out.slot_distribution[0],
        trigger_probs=out.trigger_probs[0, :lc],
    )


def trigger_weights(output: EncoderOutput) -> torch.Tensor:
    return attentive_weights(output.attention, output.trigger_probs)


def trigger_feature(output: EncoderOutput, weights: torch.Tensor) -> torch.Tensor:
    if weights.shape[0] != output.token_features.shape[0]:
        raise ContractError(
            f"weight length {weights.shape[0]} != context length {output.token_features.shape[0]}"
        )
    return weights @ output.token_features


def event_features(
    model: TriggerPromptEncoder,
    params: Mapping[str, torch.Tensor],
    example: Example,
    template: str | PromptTemplate,
) -> torch.Tensor:
    """Fused feature [v; t] from a single forward pass."""
    out = encode(model, params, example, template)
    w = trigger_weights(out)
    return torch.cat([out.slot_distribution, trigger_feature(out, w)])


# --------------------------------------------------------------------------
# Verbalizer
# --------------------------------------------------------------------------

FEATURE_MODES = ("full", "v_only", "t_only")


def feature_dim(config: EncoderConfig, feature_mode: str = "full") -> int:
    if feature_mode == "full":
        return config.vocab_size + config.hidden_dim
    if feature_mode == "v_only":
        return config.vocab_size
    if feature_mode == "t_only":
        return config.hidden_dim
    raise ConfigurationError(f"unknown feature_mode {feature_mode!r}")


def fused_features(out: BatchOutput, feature_mode: str = "full") -> torch.Tensor:
    if feature_mode == "full":
        return torch.cat([out.slot_distribution, out.trigger_feature], dim=-1)
    if feature_mode == "v_only":
        return out.slot_distribution
    if feature_mode == "t_only":
        return out.trigger_feature
    raise ConfigurationError(f"unknown feature_mode {feature_mode!r}")


def new_verbalizer(feat_dim: int, n_way: int, dtype: torch.dtype = torch.float32) -> dict[str, torch.Tensor]:
    """Fresh zero-initialized episodic head; columns correspond to the
    episode's local classes."""
    return {
        "verbalizer.weight": torch.zeros(feat_dim, n_way, dtype=dtype, requires_grad=True),
        "verbalizer.bias": torch.zeros(n_way, dtype=dtype, requires_grad=True),
    }


def verbalize(
    features: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Class logits GELU(features) @ W + b and argmax predictions.

    GELU is the exact Gaussian-CDF form.  Ties in the argmax break toward
    the lowest class index.
    """
    if features.shape[-1] != weight.shape[0]:
        raise ContractError(
            f"feature dim {features.shape[-1]} != verbalizer rows {weight.shape[0]}"
        )
    logits = F.gelu(features) @ weight + bias
    return logits, argmax_lowest(logits)


def argmax_lowest(logits: torch.Tensor) -> torch.Tensor:
    """Argmax over the last dim with ties broken by the lowest index."""
    max_vals = logits.max(dim=-1, keepdim=True).values
    is_max = logits == max_vals
    idx = torch.arange(logits.shape[-1], device=logits.device)
    return torch.where(is_max, idx, logits.shape[-1]).min(dim=-1).values


__all__ = [
    "PromptTemplate",
    "TEMPLATES",
    "get_template",
    "EncoderConfig",
    "TriggerPromptEncoder",
    "parameter_group",
    "module_parameters",
    "EncodedBatch",
    "make_batch",
    "BatchOutput",
    "run_batch",
    "received_attention",
    "attentive_weights",
    "EncoderOutput",
    "encode",
    "trigger_weights",
    "trigger_feature",
    "event_features",
    "FEATURE_MODES",
    "feature_dim",
    "fused_features",
    "new_verbalizer",
    "verbalize",
    "argmax_lowest",
]
