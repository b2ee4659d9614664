"""Relation-prompt optimization through a frozen backbone.

Each step draws a batch of (exemplar, description) pairs, a timestep per pair,
fresh Gaussian noise, L basis prepositions and M negatives, then takes one
AdamW step on the relation embedding under
``lambda_denoise * L_denoise + lambda_steer * L_steer``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from . import schedule_sampler
from .backbone import parameter_digest, placeholder_count
from .embedding_space import BASIS_PREPOSITIONS, POS, BasisPrepositionSet, VocabularyEntry
from .errors import InsufficientVocabulary, InvalidConfig, NonFiniteLoss, ValidationError
from .losses import ContrastiveBatch, DenoisePair, composite_objective, denoise_mse, steering_loss

log = logging.getLogger(__name__)

ABLATIONS = frozenset({"no_steering", "no_importance_sampling"})


@dataclass(frozen=True)
class InversionConfig:
    steps: int = 3000
    learning_rate: float = 2.5e-4
    batch_size: int = 2
    lambda_denoise: float = 1.0
    lambda_steer: float = 0.01
    temperature: float = 0.07
    alpha: float = 0.5
    num_positives: int = 8
    num_negatives: int = 64
    seed: int = 0
    ablation: tuple[str, ...] = ()
    init_word: str = "and"
    weight_decay: float = 0.0
    clip_grad_norm: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "ablation", tuple(sorted(set(self.ablation))))
        unknown = set(self.ablation) - ABLATIONS
        if unknown:
            raise InvalidConfig(f"unknown ablation(s) {sorted(unknown)}; choose from {sorted(ABLATIONS)}")
        for name in ("steps", "batch_size", "num_positives", "num_negatives"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {v!r}")
        for name in ("learning_rate", "temperature"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be > 0, got {getattr(self, name)!r}")
        for name in ("lambda_denoise", "lambda_steer", "weight_decay"):
            if not getattr(self, name) >= 0:
                raise InvalidConfig(f"{name} must be >= 0, got {getattr(self, name)!r}")
        if not 0 < self.alpha <= 1:
            raise InvalidConfig(f"alpha must lie in (0, 1], got {self.alpha!r}")
        if self.num_positives > len(BASIS_PREPOSITIONS):
            raise InvalidConfig(f"num_positives must be <= {len(BASIS_PREPOSITIONS)}")
        if self.clip_grad_norm is not None and not self.clip_grad_norm > 0:
            raise InvalidConfig("clip_grad_norm must be > 0 when set")
        if not self.init_word:
            raise InvalidConfig("init_word must be non-empty")

    @property
    def steering_enabled(self) -> bool:
        return "no_steering" not in self.ablation

    @property
    def sampling_mode(self) -> schedule_sampler.Mode:
        if "no_importance_sampling" in self.ablation:
            return schedule_sampler.Mode.UNIFORM
        return schedule_sampler.Mode.IMPORTANCE

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ablation"] = list(self.ablation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InversionConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown inversion config key(s): {sorted(unknown)}")
        d = dict(d)
        if "ablation" in d:
            d["ablation"] = tuple(d["ablation"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


@dataclass(frozen=True)
class ExemplarSet:
    """Exemplar images sharing one relation, each with descriptions holding one ``<R>``.

    ``images`` are paths or in-memory arrays, whatever the backbone's
    ``encode_image`` accepts. ``entity_words`` are the object and appearance
    words of the descriptions; they are always used as negatives.
    """

    images: tuple
    descriptions: tuple[tuple[str, ...], ...]
    entity_words: tuple[str, ...]

    def __post_init__(self):
        images = tuple(self.images)
        descriptions = tuple(tuple(d) for d in self.descriptions)
        entity_words = tuple(sorted(set(self.entity_words)))
        if not images:
            raise ValidationError("exemplar set needs at least one image")
        if len(descriptions) != len(images):
            raise ValidationError(f"{len(images)} images but {len(descriptions)} description lists")
        for i, descs in enumerate(descriptions):
            if not descs:
                raise ValidationError(f"image {i} has no descriptions")
            for d in descs:
                if placeholder_count(d) != 1:
                    raise ValidationError(f"description {d!r} must contain exactly one placeholder")
        if not entity_words:
            raise ValidationError("entity_words must be non-empty")
        if any(placeholder_count(w) for w in entity_words):
            raise ValidationError("entity_words must not contain the placeholder")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "descriptions", descriptions)
        object.__setattr__(self, "entity_words", entity_words)

    def __len__(self):
        return len(self.images)


@dataclass
class RelationPrompt:
    embedding: np.ndarray
    init_word: str
    step_count: int = 0
    history: list[dict] = field(default_factory=list, repr=False)
    config: InversionConfig | None = None
    backbone_digest: str | None = None

    @property
    def dim(self) -> int:
        return int(self.embedding.shape[0])


def initialize_prompt(backbone, init_word: str = "and") -> RelationPrompt:
    emb = backbone.word_embedding(init_word)
    return RelationPrompt(emb.detach().cpu().numpy().astype(np.float64), init_word)


class _NegativePool:
    """Vocabulary split used by :func:`assemble_negatives`, computed once per run."""

    def __init__(self, exemplars: ExemplarSet, vocab: Sequence[VocabularyEntry]):
        by_word = {e.word: e for e in vocab}
        basis = set(BASIS_PREPOSITIONS)
        bad = [w for w in exemplars.entity_words if w in basis]
        if bad:
            raise ValidationError(f"entity words {bad} are basis prepositions and cannot be negatives")
        missing = [w for w in exemplars.entity_words if w not in by_word]
        if missing:
            raise InsufficientVocabulary(f"entity words missing from vocabulary: {missing}")
        self.forced = [by_word[w] for w in exemplars.entity_words]
        forced = set(exemplars.entity_words)
        self.pool = [
            e for e in vocab if e.pos_tag is not POS.PREPOSITION and e.word not in basis and e.word not in forced
        ]
        if not self.pool and not self.forced:
            raise InsufficientVocabulary("vocabulary has no non-preposition entries")

    def draw(self, M: int, rng: np.random.Generator) -> list[VocabularyEntry]:
        if M < len(self.forced):
            raise InvalidConfig(f"M={M} is smaller than the {len(self.forced)} exemplar entity words")
        extra = M - len(self.forced)
        if extra > len(self.pool):
            raise InsufficientVocabulary(f"need {extra} extra negatives but only {len(self.pool)} candidates")
        picks = rng.choice(len(self.pool), size=extra, replace=False) if extra else []
        return self.forced + [self.pool[i] for i in picks]


def assemble_negatives(exemplars: ExemplarSet, vocab: Sequence[VocabularyEntry], M: int, rng: np.random.Generator) -> list[np.ndarray]:
    """All exemplar entity words, topped up to M with other-POS words drawn without replacement."""
    return [e.embedding for e in _NegativePool(exemplars, vocab).draw(M, rng)]


def _positive_pool(backbone, vocab, positives):
    if positives is not None:
        pool = list(positives)
    elif vocab is not None:
        pool = list(BasisPrepositionSet.from_vocabulary(vocab).entries)
    else:
        pool = [VocabularyEntry(w, POS.PREPOSITION, backbone.word_embedding(w).numpy()) for w in BASIS_PREPOSITIONS]
    if not pool:
        raise ValidationError("positive pool is empty")
    return torch.tensor(np.stack([e.embedding for e in pool]))


def invert(
    exemplars: ExemplarSet,
    backbone,
    config: InversionConfig = InversionConfig(),
    *,
    vocab: Sequence[VocabularyEntry] | None = None,
    positives: Sequence[VocabularyEntry] | None = None,
    prompt: RelationPrompt | None = None,
    callback: Callable[[int, torch.Tensor, dict], None] | None = None,
    record_history: bool = True,
    verify_frozen: bool = True,
) -> RelationPrompt:
    """Optimize the relation embedding on ``exemplars``.

    ``vocab`` defaults to ``backbone.vocabulary()``; ``positives`` defaults to
    the 56 basis prepositions. ``callback(step, embedding, record)`` runs after
    every optimizer step with the updated (detached) embedding.
    """
    if vocab is None:
        vocab = backbone.vocabulary()
    if prompt is None:
        prompt = initialize_prompt(backbone, config.init_word)
    digest_before = parameter_digest(backbone)

    steer_on = config.steering_enabled
    pos_matrix = _positive_pool(backbone, vocab, positives)
    L = config.num_positives
    if steer_on and L > pos_matrix.shape[0]:
        raise InvalidConfig(f"num_positives={L} exceeds the {pos_matrix.shape[0]} available positives")
    negatives = _NegativePool(exemplars, vocab) if steer_on else None

    # separate streams keep ablations comparable: skipping the steering draws
    # leaves batch, timestep and noise sequences untouched
    batch_rng, t_rng, noise_rng, contrast_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4)
    )
    dist = schedule_sampler.build_distribution(backbone.schedule.T, config.alpha, config.sampling_mode)

    with torch.no_grad():
        latents = torch.stack([backbone.encode_image(img) for img in exemplars.images])

    R = torch.nn.Parameter(torch.tensor(prompt.embedding, dtype=torch.float64))
    opt = torch.optim.AdamW([R], lr=config.learning_rate, weight_decay=config.weight_decay)
    n, bs = len(exemplars), config.batch_size
    zero = torch.zeros((), dtype=torch.float64)

    for step in range(1, config.steps + 1):
        idx = batch_rng.choice(n, size=bs, replace=n < bs)
        descs = [exemplars.descriptions[i][batch_rng.integers(len(exemplars.descriptions[i]))] for i in idx]
        ts = schedule_sampler.sample(dist, t_rng, bs)
        eps = torch.from_numpy(noise_rng.standard_normal((bs,) + tuple(backbone.latent_shape)))

        x_t = backbone.add_noise(latents[idx], eps, torch.from_numpy(ts))
        conds = [backbone.encode_text(d, R) for d in descs]
        pred = backbone.predict_noise(x_t, torch.from_numpy(ts), conds)
        l_denoise = denoise_mse(DenoisePair(eps, pred))

        if steer_on:
            pos_idx = contrast_rng.choice(pos_matrix.shape[0], size=L, replace=False)
            neg = torch.tensor(np.stack([e.embedding for e in negatives.draw(config.num_negatives, contrast_rng)]))
            l_steer = steering_loss(ContrastiveBatch(R, pos_matrix[pos_idx], neg, config.temperature))
        else:
            l_steer = zero
        loss = composite_objective(l_denoise, l_steer, config.lambda_denoise, config.lambda_steer)

        record = {
            "step": step,
            "loss": loss.item(),
            "denoise": l_denoise.item(),
            "steer": l_steer.item() if steer_on else None,
            "timesteps": ts.tolist(),
        }
        if not math.isfinite(record["loss"]):
            raise NonFiniteLoss(f"non-finite loss at step {step}", diagnostics=record)

        opt.zero_grad(set_to_none=True)
        loss.backward()
        if config.clip_grad_norm is not None:
            torch.nn.utils.clip_grad_norm_([R], config.clip_grad_norm)
        opt.step()
        if not torch.isfinite(R).all():
            raise NonFiniteLoss(f"embedding became non-finite at step {step}", diagnostics=record)

        prompt.step_count += 1
        if record_history:
            prompt.history.append(record)
        if callback is not None:
            callback(step, R.detach(), record)
        if step % 500 == 0:
            log.debug("step %d loss %.6g (denoise %.6g)", step, record["loss"], record["denoise"])

    prompt.embedding = R.detach().numpy().copy()
    prompt.config = config
    prompt.backbone_digest = parameter_digest(backbone)
    if verify_frozen and prompt.backbone_digest != digest_before:
        raise RuntimeError("backbone parameters changed during inversion")
    return prompt
