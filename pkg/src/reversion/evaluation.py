"""Entity and relation accuracy scores over generated images.

The vision-language scorer and the scene-graph relation feature extractor are
pluggable; toy implementations that run on the toy backbone's images are
included for tests and the fixture pipeline.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .embedding_space import normalize
from .errors import DegenerateFeatures, EmptyInput, IncompleteScores, InsufficientData, UnknownRelation
from .imageio import load_image


@runtime_checkable
class ImageTextScorer(Protocol):
    reentrant: bool

    def image_embed(self, image) -> np.ndarray: ...

    def text_embed(self, text: str) -> np.ndarray: ...


@runtime_checkable
class RelationFeatureExtractor(Protocol):
    feature_dim: int
    reentrant: bool

    def extract(self, image) -> list[np.ndarray]: ...


def entity_prompt(entity_a: str, entity_b: str) -> str:
    return f"{entity_a}, {entity_b}"


def entity_accuracy(images: Sequence, entity_a: str, entity_b: str, scorer: ImageTextScorer) -> float:
    """Mean image-text cosine against the entity-only prompt ``"E_A, E_B"``."""
    if len(images) == 0:
        raise EmptyInput("entity_accuracy needs at least one image")
    text = normalize(scorer.text_embed(entity_prompt(entity_a, entity_b)))
    sims = [float(normalize(scorer.image_embed(img)) @ text) for img in images]
    return float(np.mean(sims))


@dataclass(frozen=True)
class ClassifierBundle:
    """One-vs-rest linear classifiers over average-pooled relation features."""

    classes: tuple[str, ...]
    weights: np.ndarray
    intercepts: np.ndarray

    def decision(self, pooled: np.ndarray) -> np.ndarray:
        return self.weights @ pooled + self.intercepts

    def predict_pooled(self, pooled: np.ndarray) -> str:
        return self.classes[int(np.argmax(self.decision(pooled)))]

    def predict(self, image, extractor: RelationFeatureExtractor) -> str | None:
        """Predicted relation, or ``None`` when the extractor finds no relations."""
        pooled = pool_features(extractor.extract(image))
        return None if pooled is None else self.predict_pooled(pooled)


def pool_features(features: Sequence[np.ndarray]) -> np.ndarray | None:
    if len(features) == 0:
        return None
    return np.mean(np.stack([np.asarray(f, dtype=np.float64) for f in features]), axis=0)


def train_relation_classifiers(
    labeled: Sequence[tuple[object, str]],
    extractor: RelationFeatureExtractor,
    C: float = 1.0,
    seed: int = 0,
) -> ClassifierBundle:
    """Fit hinge-loss, L2-regularised linear SVMs (one per relation, one-vs-rest)."""
    from sklearn.multiclass import OneVsRestClassifier
    from sklearn.svm import LinearSVC

    X, y = [], []
    for image, rid in labeled:
        pooled = pool_features(extractor.extract(image))
        if pooled is not None:
            X.append(pooled)
            y.append(rid)
    classes = sorted(set(y))
    counts = {c: y.count(c) for c in classes}
    if len(classes) < 2 or min(counts.values()) < 2:
        raise InsufficientData(f"need >= 2 relation classes with >= 2 usable examples each, got {counts}")
    X = np.stack(X)
    y = np.asarray(y)

    constant = {}
    for c in classes:
        rows = X[y == c]
        if np.all(rows == rows[0]):
            constant[c] = rows[0]
    for a in constant:
        for b in constant:
            if a < b and np.array_equal(constant[a], constant[b]):
                raise DegenerateFeatures(f"relations {a!r} and {b!r} produce identical features")

    svm = LinearSVC(C=C, loss="hinge", dual=True, max_iter=100_000, random_state=seed)
    model = OneVsRestClassifier(svm).fit(X, y)
    if len(classes) == 2:
        # binary problems get a single estimator scoring classes_[1]; mirror it
        est = model.estimators_[0]
        w, b = est.coef_.ravel(), float(est.intercept_[0])
        weights, intercepts = np.stack([-w, w]), np.array([-b, b])
    else:
        order = [list(model.classes_).index(c) for c in classes]
        weights = np.stack([model.estimators_[i].coef_.ravel() for i in order])
        intercepts = np.array([float(model.estimators_[i].intercept_[0]) for i in order])
    return ClassifierBundle(tuple(classes), weights, intercepts)


def relation_accuracy(images: Sequence, target_relation: str, bundle: ClassifierBundle, extractor: RelationFeatureExtractor) -> float:
    correct, total = relation_counts(images, target_relation, bundle, extractor)
    return correct / total


def relation_counts(images, target_relation, bundle, extractor) -> tuple[int, int]:
    if target_relation not in bundle.classes:
        raise UnknownRelation(f"{target_relation!r} is not one of {list(bundle.classes)}")
    if len(images) == 0:
        raise EmptyInput("relation_accuracy needs at least one image")
    # images without detected relations count as misclassified
    correct = sum(bundle.predict(img, extractor) == target_relation for img in images)
    return int(correct), len(images)


# -- reports -------------------------------------------------------------------------


@dataclass
class RelationScore:
    entity_score: float
    n_correct: int
    n_images: int

    @property
    def relation_accuracy(self) -> float:
        return self.n_correct / self.n_images


@dataclass
class EvaluationReport:
    scores: dict[str, RelationScore] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def config_digest(self) -> str:
        raw = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_digest": self.config_digest,
            "relations": {
                rid: {
                    "entity_score": s.entity_score,
                    "relation_accuracy": s.relation_accuracy,
                    "n_correct": s.n_correct,
                    "n_images": s.n_images,
                }
                for rid, s in self.scores.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        scores = {
            rid: RelationScore(v["entity_score"], v["n_correct"], v["n_images"]) for rid, v in d["relations"].items()
        }
        return cls(scores, d.get("config", {}))


def emit_report(report: EvaluationReport, out_dir, relations: Sequence[str] | None = None) -> tuple[Path, Path]:
    """Write ``report.json`` and the plot-data ``report.csv``; every requested relation must be scored."""
    if relations is not None:
        missing = set(relations) - set(report.scores)
        if missing:
            raise IncompleteScores(missing)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    csv_path = out_dir / "report.csv"
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["relation_id", "entity_score", "relation_accuracy"])
        for rid, s in report.scores.items():
            w.writerow([rid, repr(s.entity_score), repr(s.relation_accuracy)])
    return json_path, csv_path


def load_report(path) -> EvaluationReport:
    return EvaluationReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- toy scorer and extractor -----------------------------------------------------------


def _as_array(image) -> np.ndarray:
    if isinstance(image, (str, Path)):
        return load_image(image)
    return np.asarray(image, dtype=np.float64)


class ToyImageTextScorer:
    """Stand-in for a CLIP-style scorer: fixed random projections of the toy latent and word embeddings."""

    reentrant = True

    def __init__(self, backbone, seed: int = 0, dim: int = 16):
        self.backbone = backbone
        rng = np.random.default_rng(seed + 101)
        self._img = rng.standard_normal((dim, 16))
        self._txt = rng.standard_normal((dim, backbone.embedding_dim))

    def image_embed(self, image) -> np.ndarray:
        latent = self.backbone.encode_image(_as_array(image)).numpy().ravel()
        return normalize(self._img @ latent)

    def text_embed(self, text: str) -> np.ndarray:
        tokens = [t for t in self.backbone.tokenize(text) if t not in {",", "."}]
        if not tokens:
            raise EmptyInput(f"no scorable tokens in {text!r}")
        mean = np.mean([self.backbone.token_embedding(t).numpy() for t in tokens], axis=0)
        return normalize(self._txt @ mean)


class ToyRelationExtractor:
    """Row/column intensity profiles as 'relation features'; blank images yield no features."""

    reentrant = True
    feature_dim = 16

    def __init__(self, bins: int = 8):
        self.bins = bins
        self.feature_dim = 2 * bins

    def extract(self, image) -> list[np.ndarray]:
        img = _as_array(image)
        if img.std() < 1e-6:
            return []
        k = self.bins
        h, w = img.shape[0] // k, img.shape[1] // k
        blocks = img[: h * k, : w * k].reshape(k, h, k, w)
        row_mean = blocks.mean(axis=(1, 2, 3))
        col_mean = blocks.mean(axis=(0, 1, 3))
        row_max = blocks.max(axis=(1, 2, 3))
        col_max = blocks.max(axis=(0, 1, 3))
        return [np.concatenate([row_mean, col_mean]), np.concatenate([row_max, col_max])]
