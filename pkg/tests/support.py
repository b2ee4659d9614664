"""Constructions shared by the inversion and acceptance tests."""

from __future__ import annotations

import numpy as np

from reversion.embedding_space import POS, VocabularyEntry
from reversion.inversion import ExemplarSet
from reversion.toy import RiggedToyBackbone

RIGGED_DESCRIPTIONS = (
    ("cat <R> box",),
    ("a brown dog <R> a basket",),
    ("panda <R> a white bowl",),
    ("a young child <R> a red car",),
)
RIGGED_ENTITIES = ("cat", "box", "dog", "basket", "brown", "panda", "bowl", "white", "child", "car", "young", "red")


def rigged_problem(seed: int = 1, offset: float = 0.25):
    """Rigged backbone, exemplars rendered from a target v*, and v* itself."""
    bb = RiggedToyBackbone()
    start = bb.word_embedding("and").numpy()
    u = np.random.default_rng(seed).standard_normal(bb.embedding_dim)
    v_star = start + offset * np.linalg.norm(start) * u / np.linalg.norm(u)
    images = [bb.render(d[0], v_star) for d in RIGGED_DESCRIPTIONS]
    return bb, ExemplarSet(images, RIGGED_DESCRIPTIONS, RIGGED_ENTITIES), v_star


def symmetric_vocabulary(dim: int = 16, positive: str = "atop"):
    """One positive on e0; negatives on +/-e_k so their pull cancels around e0."""
    eye = np.eye(dim)
    pos = VocabularyEntry(positive, POS.PREPOSITION, eye[0])
    negs = []
    for k in range(1, dim):
        negs.append(VocabularyEntry(f"noun{k}", POS.NOUN, eye[k]))
        negs.append(VocabularyEntry(f"verb{k}", POS.VERB, -eye[k]))
    return pos, negs


def contrastive_gradient_flow(r0, positive, negatives, gamma=0.07, lr=1e-3, steps=20000):
    """Plain gradient descent on the single-positive contrastive loss, hand-derived gradient."""
    p = positive / np.linalg.norm(positive)
    N = np.stack([n / np.linalg.norm(n) for n in negatives])
    keys = np.vstack([p, N])
    r = np.array(r0, dtype=np.float64)
    for _ in range(steps):
        norm = np.linalg.norm(r)
        u = r / norm
        logits = keys @ u / gamma
        w = np.exp(logits - logits.max())
        w /= w.sum()
        # d/du [logsumexp(K u / g) - p.u / g] = (K^T w - p) / g, then project off u
        g_u = (keys.T @ w - p) / gamma
        r = r - lr * (g_u - u * (u @ g_u)) / norm
    return r
