"""A tiny, fully linear stand-in for a latent text-to-image backbone.

Dimensions: 16-d token embeddings, a 1x4x4 latent decoded to a 32x32
grayscale image, a mean-pool-then-matrix text encoder, a linear noise
predictor and a 50-step linear-beta schedule. All weights come from a fixed
seed so every oracle in the test-suite can be written down by hand.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .backbone import PLACEHOLDER, NoiseSchedule, TextEncoding, add_noise
from .embedding_space import BASIS_PREPOSITIONS, POS, VocabularyEntry
from .errors import (
    MissingPlaceholder,
    MultiplePlaceholders,
    SequenceTooLong,
    ShapeMismatch,
    UnknownWord,
    ValidationError,
)
from .imageio import load_image

BOS = "<|startoftext|>"
EOS = "<|endoftext|>"

NOUNS = (
    "man woman child boy girl baby person cat rabbit monkey dog hamster kangaroo panda bear "
    "lion tiger elephant horse camel bird duck teddy doll box basket bowl cup mug vase plate "
    "jar bottle bag blanket towel scarf cloth paper wall rock stone marble clay wood ice tree "
    "branch bicycle motorcycle skateboard car table chair sofa bed shelf ceiling rope hook lamp "
    "apple orange cake statue sculpture photo room garden park street kitchen beach"
).split()
ADJECTIVES = (
    "white black brown gray red blue green yellow small large big little wooden fluffy furry "
    "cute old young tall soft golden striped shiny dark bright cozy"
).split()
VERBS = "sits hugs shakes rides hangs wraps holds stands lies looks plays sleeps".split()
OTHER = "and a an the two is are its their each other together , .".split()

_TOKEN_RE = re.compile(r"<R>|⟨R⟩|<\|[a-z]+\|>|[A-Za-z']+|[^\w\s]")


def toy_tagged_words() -> list[tuple[str, POS]]:
    """Every regular toy word with its part-of-speech, in table order."""
    out = [(w, POS.PREPOSITION) for w in BASIS_PREPOSITIONS]
    out += [(w, POS.NOUN) for w in NOUNS]
    out += [(w, POS.ADJECTIVE) for w in ADJECTIVES]
    out += [(w, POS.VERB) for w in VERBS]
    out += [(w, POS.OTHER) for w in OTHER]
    return out


class ToyBackbone:
    """Linear toy backbone; ``eps_theta(x_t, t, c) = A x_t + B c`` with ``c = W mean(tokens)``."""

    placeholder = PLACEHOLDER
    embedding_dim = 16
    cond_dim = 16
    latent_shape = (1, 4, 4)
    image_size = 32
    max_length = 32
    supports_unconditional = True

    def __init__(self, seed: int = 0, T: int = 50, cluster_noise: float = 0.6):
        self.seed = seed
        self.schedule = NoiseSchedule.linear(T)
        rng = np.random.default_rng(seed)
        D = self.embedding_dim

        tagged = toy_tagged_words()
        pos_order = list(POS)
        centroids = rng.standard_normal((len(pos_order), D))
        centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
        rows = []
        for _, pos in tagged:
            c = centroids[pos_order.index(pos)]
            rows.append(c + cluster_noise * rng.standard_normal(D) / np.sqrt(D))
        specials = [BOS, EOS, PLACEHOLDER]
        for _ in specials:
            rows.append(rng.standard_normal(D) / np.sqrt(D))

        self._words = [w for w, _ in tagged] + specials
        self._pos = {w: p for w, p in tagged}
        self._index = {w: i for i, w in enumerate(self._words)}
        self._params = {
            "token_embedding": torch.tensor(np.stack(rows)),
            "text_proj": torch.tensor(rng.standard_normal((self.cond_dim, D)) / np.sqrt(D)),
            "unet_x": torch.tensor(rng.standard_normal((16, 16)) / 4.0),
            "unet_c": torch.tensor(rng.standard_normal((16, self.cond_dim)) / 4.0),
        }
        for p in self._params.values():
            p.requires_grad_(False)

    # -- tokenizer and embeddings ---------------------------------------------------

    @property
    def num_timesteps(self) -> int:
        return self.schedule.T

    def parameters(self):
        return dict(self._params)

    def tokenize(self, text: str) -> list[str]:
        out = []
        for tok in _TOKEN_RE.findall(text):
            if tok in ("<R>", "⟨R⟩"):
                out.append(self.placeholder)
            elif tok.startswith("<|"):
                out.append(tok)
            else:
                out.append(tok.lower())
        return out

    def has_token(self, token: str) -> bool:
        return token in self._index

    def token_embedding(self, token: str) -> torch.Tensor:
        try:
            return self._params["token_embedding"][self._index[token]].clone()
        except KeyError:
            raise UnknownWord(f"{token!r} is not in the toy vocabulary") from None

    def word_embedding(self, word: str) -> torch.Tensor:
        toks = self.tokenize(word)
        if not toks:
            raise UnknownWord(f"{word!r} produced no tokens")
        return torch.stack([self.token_embedding(t) for t in toks]).mean(0)

    def vocabulary(self) -> list[VocabularyEntry]:
        table = self._params["token_embedding"].numpy()
        return [VocabularyEntry(w, self._pos[w], table[self._index[w]].copy()) for w in self._pos]

    # -- text encoder --------------------------------------------------------------

    def encode_text(self, prompt, injected=None) -> TextEncoding:
        words = self.tokenize(prompt) if isinstance(prompt, str) else list(prompt)
        tokens = [BOS] + words + [EOS]
        if len(tokens) > self.max_length:
            raise SequenceTooLong(f"{len(tokens)} tokens exceeds limit {self.max_length}")
        ids = []
        for tok in tokens:
            if tok not in self._index:
                raise UnknownWord(f"{tok!r} is not in the toy vocabulary")
            ids.append(self._index[tok])
        emb = self._params["token_embedding"][ids]

        slot = None
        if injected is not None:
            slot, vec = _unpack_injection(injected)
            slots = [i for i, tok in enumerate(tokens) if tok == self.placeholder]
            if not slots:
                raise MissingPlaceholder(f"prompt {' '.join(words)!r} has no {self.placeholder} slot")
            if len(slots) > 1:
                raise MultiplePlaceholders(f"prompt {' '.join(words)!r} has {len(slots)} {self.placeholder} slots")
            if slot is None:
                slot = slots[0]
            elif slot != slots[0]:
                raise MissingPlaceholder(f"slot {slot} does not hold {self.placeholder}")
            vec = torch.as_tensor(vec, dtype=emb.dtype)
            if vec.shape != (self.embedding_dim,):
                raise ShapeMismatch(f"injected vector has shape {tuple(vec.shape)}")
            mask = torch.zeros(len(tokens), 1, dtype=emb.dtype)
            mask[slot] = 1.0
            emb = emb * (1.0 - mask) + mask * vec
        cond = self._params["text_proj"] @ emb.mean(0)
        return TextEncoding(tuple(tokens), emb, cond, slot)

    # -- latent codec -----------------------------------------------------------------

    def encode_image(self, image) -> torch.Tensor:
        if isinstance(image, (str, Path)):
            image = load_image(image)
        img = torch.as_tensor(np.asarray(image, dtype=np.float64))
        if img.ndim != 2 or img.shape[0] % 4 or img.shape[1] % 4:
            raise ShapeMismatch(f"toy codec needs a 2-D image with sides divisible by 4, got {tuple(img.shape)}")
        h, w = img.shape[0] // 4, img.shape[1] // 4
        blocks = img.reshape(4, h, 4, w).mean(dim=(1, 3))
        return (blocks * 2.0 - 1.0).reshape(self.latent_shape)

    def decode_latent(self, latent: torch.Tensor) -> np.ndarray:
        lat = torch.as_tensor(latent, dtype=torch.float64).reshape(4, 4)
        k = self.image_size // 4
        img = ((lat + 1.0) / 2.0).repeat_interleave(k, 0).repeat_interleave(k, 1)
        return img.detach().numpy()

    # -- diffusion -------------------------------------------------------------------

    def add_noise(self, x0, eps, t):
        return add_noise(self.schedule, x0, eps, t)

    def _cond_matrix(self, cond, batch: int) -> torch.Tensor:
        if isinstance(cond, TextEncoding):
            c = cond.encoded_condition.unsqueeze(0)
        elif isinstance(cond, (list, tuple)):
            c = torch.stack([e.encoded_condition for e in cond])
        else:
            c = torch.as_tensor(cond, dtype=torch.float64)
            c = c.unsqueeze(0) if c.ndim == 1 else c
        if c.shape[0] not in (1, batch):
            raise ShapeMismatch(f"{c.shape[0]} conditions for a batch of {batch}")
        return c

    def _flat(self, x_t, t):
        x = torch.as_tensor(x_t, dtype=torch.float64)
        single = x.shape == self.latent_shape
        if not single and x.shape[1:] != self.latent_shape:
            raise ShapeMismatch(f"latent shape {tuple(x.shape)} does not match {self.latent_shape}")
        ts = torch.as_tensor(t, dtype=torch.long).reshape(-1)
        for ti in ts.tolist():
            self.schedule.check_t(ti)
        return x.reshape(-1, 16), single, x.shape, ts

    def predict_noise(self, x_t, t, cond) -> torch.Tensor:
        flat, single, shape, _ = self._flat(x_t, t)
        c = self._cond_matrix(cond, flat.shape[0])
        out = flat @ self._params["unet_x"].T + c @ self._params["unet_c"].T
        return out.reshape(shape)


class RiggedToyBackbone(ToyBackbone):
    """Toy variant whose denoising loss is exactly zero at a chosen relation vector.

    The predictor reads the clean latent off the condition,
    ``x0_hat = G c``, and returns the noise consistent with it,
    ``(x_t - signal_t * x0_hat) / noise_t``. Exemplar latents produced by
    :meth:`render` from a target vector ``v*`` are then reconstructed perfectly
    when ``v*`` is injected, and ``G W`` being invertible makes ``v*`` the only
    such vector.
    """

    readout_gain = 4.0

    def __init__(self, seed: int = 0, T: int = 50, **kw):
        super().__init__(seed=seed, T=T, **kw)
        rng = np.random.default_rng(seed + 7919)
        q, _ = np.linalg.qr(rng.standard_normal((16, 16)))
        # G W = 4 Q keeps the loss isotropic in the injected vector
        w_inv = np.linalg.inv(self._params["text_proj"].numpy())
        self._params["readout"] = torch.tensor(4.0 * q @ w_inv)
        self._params["readout"].requires_grad_(False)

    def clean_latent(self, cond) -> torch.Tensor:
        c = self._cond_matrix(cond, 1)
        return (c @ self._params["readout"].T).reshape((-1,) + self.latent_shape)

    def predict_noise(self, x_t, t, cond) -> torch.Tensor:
        flat, single, shape, ts = self._flat(x_t, t)
        c = self._cond_matrix(cond, flat.shape[0])
        x0_hat = c @ self._params["readout"].T
        sig = self.schedule.signal[ts].unsqueeze(1)
        noi = self.schedule.noise[ts].unsqueeze(1)
        return ((flat - sig * x0_hat) / noi).reshape(shape)

    @torch.no_grad()
    def render(self, description: str, target) -> np.ndarray:
        """Image whose latent is exactly what ``description`` with ``target`` injected predicts."""
        enc = self.encode_text(description, torch.as_tensor(target, dtype=torch.float64))
        return self.decode_latent(self.clean_latent(enc)[0])


def _unpack_injection(injected):
    if isinstance(injected, tuple) and len(injected) == 2 and not isinstance(injected[0], torch.Tensor):
        return int(injected[0]), injected[1]
    return None, injected


def toy_backbone_from_spec(spec: str | None):
    """Resolve ``"toy"``, ``"toy:<seed>"`` or ``"rigged:<seed>"``."""
    kind, _, seed = (spec or "toy").partition(":")
    seed = int(seed or 0)
    if kind == "toy":
        return ToyBackbone(seed=seed)
    if kind == "rigged":
        return RiggedToyBackbone(seed=seed)
    raise ValidationError(f"unknown toy backbone {spec!r}")
