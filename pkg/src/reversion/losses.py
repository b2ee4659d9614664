"""Contrastive steering losses and the denoising MSE.

All functions accept tensors (or anything ``torch.as_tensor`` understands) and
return 0-dim float64 tensors so they can sit inside an autograd graph built
around the relation embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .errors import (
    DimensionMismatch,
    EmptyNegatives,
    EmptyPositives,
    NegativeWeight,
    NonPositiveTemperature,
    ShapeMismatch,
)

DEFAULT_TEMPERATURE = 0.07
LAMBDA_DENOISE = 1.0
LAMBDA_STEER = 0.01


def _as64(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(torch.float64)
    return torch.as_tensor(x, dtype=torch.float64)


def _stack(vectors, name: str) -> torch.Tensor:
    if isinstance(vectors, torch.Tensor):
        m = _as64(vectors)
        return m.unsqueeze(0) if m.ndim == 1 else m
    vectors = list(vectors)
    if not vectors:
        return torch.empty(0, 0, dtype=torch.float64)
    dims = {int(_as64(v).shape[-1]) for v in vectors}
    if len(dims) > 1:
        raise DimensionMismatch(f"{name} have mixed dimensions {sorted(dims)}")
    return torch.stack([_as64(v) for v in vectors])


def _unit(x: torch.Tensor) -> torch.Tensor:
    return x / x.norm(dim=-1, keepdim=True)


def _contrastive(relation, positives: torch.Tensor, negatives: torch.Tensor, temperature: float) -> torch.Tensor:
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    r = _as64(relation)
    if r.ndim != 1:
        raise DimensionMismatch(f"relation must be a vector, got shape {tuple(r.shape)}")
    for name, m in (("positives", positives), ("negatives", negatives)):
        if m.shape[-1] != r.shape[0]:
            raise DimensionMismatch(f"{name} have dimension {m.shape[-1]}, relation has {r.shape[0]}")
    r = _unit(r)
    pos_logits = _unit(positives) @ r / temperature
    neg_logits = _unit(negatives) @ r / temperature
    # -log(sum_pos / (sum_pos + sum_neg)) = lse(all) - lse(pos)
    return torch.logsumexp(torch.cat([pos_logits, neg_logits]), 0) - torch.logsumexp(pos_logits, 0)


def preliminary_contrastive(relation, positive, negatives: Sequence, temperature: float = DEFAULT_TEMPERATURE):
    """InfoNCE with a single positive preposition and K negatives."""
    neg = _stack(negatives, "negatives")
    if neg.shape[0] == 0:
        raise EmptyNegatives("need at least one negative")
    return _contrastive(relation, _as64(positive).unsqueeze(0), neg, temperature)


@dataclass
class ContrastiveBatch:
    relation: object
    positives: Sequence
    negatives: Sequence
    temperature: float = DEFAULT_TEMPERATURE


def steering_loss(batch: ContrastiveBatch) -> torch.Tensor:
    """Multiple-positive (noise tolerant) contrastive loss over L positives and M negatives."""
    pos = _stack(batch.positives, "positives")
    neg = _stack(batch.negatives, "negatives")
    if pos.shape[0] == 0:
        raise EmptyPositives("need at least one positive")
    if neg.shape[0] == 0:
        raise EmptyNegatives("need at least one negative")
    return _contrastive(batch.relation, pos, neg, batch.temperature)


@dataclass
class DenoisePair:
    true_noise: object
    predicted_noise: object


def denoise_mse(pair: DenoisePair) -> torch.Tensor:
    eps = _as64(pair.true_noise)
    pred = _as64(pair.predicted_noise)
    if eps.shape != pred.shape:
        raise ShapeMismatch(f"noise shapes differ: {tuple(eps.shape)} vs {tuple(pred.shape)}")
    return ((eps - pred) ** 2).mean()


def composite_objective(denoise, steer, lambda_denoise: float = LAMBDA_DENOISE, lambda_steer: float = LAMBDA_STEER):
    if lambda_denoise < 0 or lambda_steer < 0:
        raise NegativeWeight(f"loss weights must be >= 0, got denoise={lambda_denoise}, steer={lambda_steer}")
    return lambda_steer * steer + lambda_denoise * denoise
