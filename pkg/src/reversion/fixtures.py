"""Synthetic benchmark fixture for the toy backbone.

Only the back-to-back entity lists are the canonical ones; the
other nine relations use reconstructed lists in the same 10x10 pattern. All
words are in the toy vocabulary so the fixture runs end to end.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .benchmark import RELATIONS, expand_templates
from .imageio import save_png

BACK_TO_BACK_ENTITIES = ("man", "woman", "child", "cat", "rabbit", "monkey", "dog", "hamster", "kangaroo", "panda")

ENTITY_LISTS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "painted_on": (
        ("cat", "dog", "panda", "rabbit", "bird", "horse", "tiger", "lion", "elephant", "monkey"),
        ("wall", "mug", "vase", "plate", "cup", "bottle", "rock", "car", "bag", "paper"),
    ),
    "carved_by": (
        ("cat", "dog", "panda", "rabbit", "bird", "horse", "bear", "lion", "elephant", "duck"),
        ("wood", "stone", "marble", "clay", "ice", "paper", "cake", "apple", "orange", "cloth"),
    ),
    "shake_hands": (
        ("man", "woman", "child", "boy", "girl", "monkey", "cat", "dog", "bear", "panda"),
        ("man", "woman", "child", "boy", "girl", "monkey", "cat", "dog", "bear", "panda"),
    ),
    "hug": (
        ("man", "woman", "child", "girl", "boy", "cat", "dog", "panda", "bear", "monkey"),
        ("teddy", "doll", "cat", "dog", "rabbit", "panda", "hamster", "baby", "duck", "kangaroo"),
    ),
    "back2back": (BACK_TO_BACK_ENTITIES, BACK_TO_BACK_ENTITIES),
    "inside": (
        ("cat", "dog", "rabbit", "hamster", "apple", "orange", "duck", "bird", "teddy", "doll"),
        ("box", "basket", "bowl", "cup", "mug", "vase", "jar", "bag", "car", "room"),
    ),
    "on_top_of": (
        ("cat", "dog", "rabbit", "panda", "monkey", "apple", "cake", "teddy", "cup", "lamp"),
        ("table", "chair", "sofa", "bed", "shelf", "box", "rock", "car", "plate", "bicycle"),
    ),
    "hanging_from": (
        ("monkey", "cat", "child", "man", "woman", "lamp", "bag", "rope", "apple", "bird"),
        ("tree", "branch", "ceiling", "hook", "wall", "lamp", "shelf", "car", "bicycle", "table"),
    ),
    "wrapped_in": (
        ("cat", "dog", "baby", "child", "panda", "rabbit", "hamster", "teddy", "apple", "cake"),
        ("blanket", "towel", "scarf", "cloth", "paper", "bag", "rope", "ice", "clay", "wood"),
    ),
    "ride_on": (
        ("man", "woman", "child", "boy", "girl", "monkey", "cat", "dog", "teddy", "panda"),
        ("horse", "camel", "elephant", "bicycle", "motorcycle", "skateboard", "car", "tiger", "dog", "kangaroo"),
    ),
}

EXEMPLAR_COUNTS = (4, 5, 6, 7, 8, 9, 10, 4, 6, 8)
ADJECTIVES = ("white", "black", "brown", "gray", "small", "large", "fluffy", "wooden", "red", "young")
SCENES = ("room", "garden", "park", "street", "kitchen", "beach")


def _article(word: str) -> str:
    return "an" if word[0] in "aeiou" else "a"


def multi_level_descriptions(a: str, b: str, adj_a: str, adj_b: str, scene: str) -> list[str]:
    """Coarse-to-detailed captions for one exemplar, each with one ``<R>``."""
    return [
        f"{a} <R> {b}",
        f"{_article(a)} {a} <R> {_article(b)} {b}",
        f"{_article(adj_a)} {adj_a} {a} <R> {_article(adj_b)} {adj_b} {b}",
        f"a photo of {_article(adj_a)} {adj_a} {a} <R> {_article(adj_b)} {adj_b} {b} in the {scene}",
    ]


def exemplar_image(relation_index: int, rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """Noisy grayscale pattern with a relation-specific bright band."""
    img = 0.25 + 0.1 * rng.standard_normal((size, size))
    band = size // 10
    lo = relation_index * band
    if relation_index % 2:
        img[lo : lo + band + 2, :] += 0.5
    else:
        img[:, lo : lo + band + 2] += 0.5
    return np.clip(img, 0.0, 1.0)


def write_fixture_benchmark(root, seed: int = 0) -> Path:
    root = Path(root)
    rng = np.random.default_rng(seed)
    for k, rid in enumerate(RELATIONS):
        ents_a, ents_b = ENTITY_LISTS[rid]
        rel_dir = root / rid
        ex_dir = rel_dir / "exemplars"
        ex_dir.mkdir(parents=True, exist_ok=True)
        meta = {
            "relation_id": rid,
            "description": RELATIONS[rid],
            "entities_a": list(ents_a),
            "entities_b": list(ents_b),
            "reconstructed_entities": rid != "back2back",
        }
        (rel_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        for i in range(EXEMPLAR_COUNTS[k]):
            a, b = ents_a[rng.integers(10)], ents_b[rng.integers(10)]
            adj_a, adj_b = rng.choice(ADJECTIVES, size=2, replace=False)
            scene = SCENES[rng.integers(len(SCENES))]
            save_png(exemplar_image(k, rng), ex_dir / f"{i:02d}.png")
            cap = {
                "descriptions": multi_level_descriptions(a, b, str(adj_a), str(adj_b), scene),
                "entities": sorted({a, b, str(adj_a), str(adj_b), scene}),
            }
            (ex_dir / f"{i:02d}.captions.json").write_text(json.dumps(cap, indent=2) + "\n", encoding="utf-8")
        templates = [t.to_dict() for t in expand_templates(ents_a, ents_b)]
        (rel_dir / "inference_templates.json").write_text(json.dumps(templates, indent=1) + "\n", encoding="utf-8")
    return root
