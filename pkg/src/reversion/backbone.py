"""Frozen text-to-image diffusion backbone contract.

A backbone exposes a tokenizer with an input-embedding table, a text encoder
that accepts one injected embedding at a placeholder slot, a latent codec, a
noise schedule over timesteps ``1..T`` and a noise predictor. Backbone weights
are never updated; only the injected vector carries gradient.

Adapters for real pre-trained models implement :class:`DiffusionBackbone` and
should pass :func:`reversion.conformance.run_conformance`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
import torch

from .errors import OutOfRange, ShapeMismatch, UnsupportedGuidance, ValidationError

PLACEHOLDER = "<R>"
PLACEHOLDER_DISPLAY = "⟨R⟩"
DEFAULT_GUIDANCE = 7.5


def placeholder_count(text: str) -> int:
    """Number of relation placeholders, accepting both the ASCII and display spellings."""
    return text.count(PLACEHOLDER) + text.count(PLACEHOLDER_DISPLAY)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step coefficients so that ``x_t = signal[t] * x_0 + noise[t] * eps``.

    Index 0 is the clean endpoint (signal 1, noise 0); indices ``1..T`` are the
    noisy steps a backbone trains on.
    """

    signal: torch.Tensor
    noise: torch.Tensor

    def __post_init__(self):
        s = torch.as_tensor(self.signal, dtype=torch.float64)
        n = torch.as_tensor(self.noise, dtype=torch.float64)
        if s.shape != n.shape or s.ndim != 1 or len(s) < 2:
            raise ValidationError("signal and noise must be 1-D of equal length T+1")
        if not (torch.isfinite(s).all() and torch.isfinite(n).all()):
            raise ValidationError("schedule coefficients must be finite")
        object.__setattr__(self, "signal", s)
        object.__setattr__(self, "noise", n)

    @property
    def T(self) -> int:
        return len(self.signal) - 1

    @classmethod
    def linear(cls, T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        """DDPM linear-beta schedule, rescaled so short schedules still reach pure noise."""
        scale = 1000.0 / T
        betas = torch.linspace(scale * beta_start, scale * beta_end, T, dtype=torch.float64)
        alphas_cumprod = torch.cumprod(1.0 - betas, 0)
        abar = torch.cat([torch.ones(1, dtype=torch.float64), alphas_cumprod])
        return cls(abar.sqrt(), (1.0 - abar).sqrt())

    def check_t(self, t: int) -> int:
        if not 1 <= int(t) <= self.T:
            raise OutOfRange(f"timestep {t} outside 1..{self.T}")
        return int(t)


@dataclass
class TextEncoding:
    tokens: tuple[str, ...]
    token_embeddings: torch.Tensor
    encoded_condition: torch.Tensor
    placeholder_slot: int | None = None


@runtime_checkable
class DiffusionBackbone(Protocol):
    placeholder: str
    embedding_dim: int
    latent_shape: tuple[int, ...]
    schedule: NoiseSchedule
    supports_unconditional: bool

    def tokenize(self, text: str) -> list[str]: ...

    def has_token(self, token: str) -> bool: ...

    def token_embedding(self, token: str) -> torch.Tensor: ...

    def word_embedding(self, word: str) -> torch.Tensor: ...

    def encode_text(self, prompt, injected=None) -> TextEncoding: ...

    def encode_image(self, image) -> torch.Tensor: ...

    def decode_latent(self, latent: torch.Tensor) -> np.ndarray: ...

    def add_noise(self, x0: torch.Tensor, eps: torch.Tensor, t) -> torch.Tensor: ...

    def predict_noise(self, x_t: torch.Tensor, t, cond) -> torch.Tensor:
        """``x_t`` is one latent or a batch; ``t`` an int or one per row; ``cond`` one encoding or a list."""
        ...

    def parameters(self) -> Mapping[str, torch.Tensor]: ...


def parameter_digest(backbone) -> str:
    """SHA-256 over every backbone parameter (name, dtype, shape, raw bytes)."""
    h = hashlib.sha256()
    for name, p in sorted(backbone.parameters().items()):
        arr = p.detach().cpu().contiguous().numpy()
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(repr(tuple(arr.shape)).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def add_noise(schedule: NoiseSchedule, x0: torch.Tensor, eps: torch.Tensor, t) -> torch.Tensor:
    """Forward-diffuse ``x0``; ``t`` may be an int or a 1-D batch of ints (one per leading row)."""
    if x0.shape != eps.shape:
        raise ShapeMismatch(f"x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")
    ts = torch.as_tensor(t, dtype=torch.long)
    if ts.ndim == 0:
        schedule.check_t(int(ts))
        return schedule.signal[ts] * x0 + schedule.noise[ts] * eps
    for ti in ts.tolist():
        schedule.check_t(ti)
    view = (-1,) + (1,) * (x0.ndim - 1)
    return schedule.signal[ts].view(view) * x0 + schedule.noise[ts].view(view) * eps


def _timesteps(T: int, steps: int) -> list[int]:
    if steps < 1:
        raise OutOfRange(f"steps must be >= 1, got {steps}")
    ts = np.linspace(T, 1, min(steps, T)).round().astype(int)
    return list(dict.fromkeys(ts.tolist()))


def guided_noise(backbone, x_t, t, cond: TextEncoding, uncond: TextEncoding | None, guidance_weight: float):
    eps_c = backbone.predict_noise(x_t, t, cond)
    if uncond is None:
        return eps_c
    eps_u = backbone.predict_noise(x_t, t, uncond)
    return eps_u + guidance_weight * (eps_c - eps_u)


@torch.no_grad()
def sample_latent(
    backbone,
    prompt,
    injected=None,
    guidance_weight: float = DEFAULT_GUIDANCE,
    steps: int = 50,
    seed: int = 0,
    clip_sample: bool = True,
) -> torch.Tensor:
    """Deterministic DDIM (eta=0) sampling with classifier-free guidance.

    ``guidance_weight == 1`` skips the unconditional pass entirely, which is the
    same trajectory the guidance formula would give.
    """
    use_cfg = guidance_weight != 1.0
    if use_cfg and not backbone.supports_unconditional:
        raise UnsupportedGuidance("backbone has no unconditional conditioning for classifier-free guidance")
    sched = backbone.schedule
    cond = backbone.encode_text(prompt, injected)
    uncond = backbone.encode_text("") if use_cfg else None

    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(backbone.latent_shape, generator=gen, dtype=torch.float64)
    ts = _timesteps(sched.T, steps)
    for i, t in enumerate(ts):
        eps = guided_noise(backbone, x, t, cond, uncond, guidance_weight)
        x0 = (x - sched.noise[t] * eps) / sched.signal[t]
        if clip_sample:
            x0 = x0.clamp(-1.0, 1.0)
        t_next = ts[i + 1] if i + 1 < len(ts) else 0
        x = sched.signal[t_next] * x0 + sched.noise[t_next] * eps
    return x


def generate(backbone, prompt, injected=None, guidance_weight: float = DEFAULT_GUIDANCE, steps: int = 50, seed: int = 0) -> np.ndarray:
    """Sample a latent and decode it to an image array with values in [0, 1]."""
    latent = sample_latent(backbone, prompt, injected, guidance_weight, steps, seed)
    return np.clip(backbone.decode_latent(latent), 0.0, 1.0)
