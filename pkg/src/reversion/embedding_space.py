"""Token-embedding vocabulary, the basis preposition set and the analyses run over them.

Everything here works in the backbone's token *input* embedding space, which is
where the learnable relation token is injected.
"""

from __future__ import annotations

import base64
import enum
import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, InsufficientData, UnknownWord, ValidationError, ZeroVector

EPS_NORM = 1e-12
DEFAULT_TAU_ACT = 0.2


class POS(str, enum.Enum):
    PREPOSITION = "preposition"
    NOUN = "noun"
    ADJECTIVE = "adjective"
    VERB = "verb"
    OTHER = "other"


def _load_basis_words() -> tuple[str, ...]:
    text = resources.files("reversion").joinpath("assets/basis_prepositions.txt").read_text("utf-8")
    return tuple(w.strip() for w in text.splitlines() if w.strip())


BASIS_PREPOSITIONS: tuple[str, ...] = _load_basis_words()


@dataclass(frozen=True)
class VocabularyEntry:
    word: str
    pos_tag: POS
    embedding: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.word:
            raise ValidationError("vocabulary word must be non-empty")
        object.__setattr__(self, "pos_tag", POS(self.pos_tag))
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise DimensionMismatch(f"embedding for {self.word!r} must be a vector, got shape {emb.shape}")
        emb.setflags(write=False)
        object.__setattr__(self, "embedding", emb)

    @property
    def dim(self) -> int:
        return self.embedding.shape[0]


@dataclass(frozen=True)
class BasisPrepositionSet:
    """The 56 positive-sample prepositions, in their canonical listing order."""

    entries: tuple[VocabularyEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        words = tuple(e.word for e in entries)
        if words != BASIS_PREPOSITIONS:
            missing = sorted(set(BASIS_PREPOSITIONS) - set(words))
            extra = sorted(set(words) - set(BASIS_PREPOSITIONS))
            raise ValidationError(
                f"basis must list the {len(BASIS_PREPOSITIONS)} prepositions in canonical order "
                f"(missing={missing}, unexpected={extra})"
            )
        if any(e.pos_tag is not POS.PREPOSITION for e in entries):
            raise ValidationError("every basis entry must be tagged as a preposition")
        _check_same_dim(e.embedding for e in entries)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_vocabulary(cls, vocab: Iterable[VocabularyEntry]) -> "BasisPrepositionSet":
        by_word = {e.word: e for e in vocab}
        missing = [w for w in BASIS_PREPOSITIONS if w not in by_word]
        if missing:
            raise UnknownWord(f"vocabulary lacks basis prepositions: {missing}")
        return cls(tuple(by_word[w] for w in BASIS_PREPOSITIONS))

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(e.word for e in self.entries)

    def matrix(self) -> np.ndarray:
        return np.stack([e.embedding for e in self.entries])

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class SimilarityProfile:
    relation_label: str
    scores: np.ndarray
    sparsity: float
    words: tuple[str, ...] = ()
    threshold: float = DEFAULT_TAU_ACT

    def to_dict(self) -> dict:
        return {
            "relation_label": self.relation_label,
            "threshold": self.threshold,
            "sparsity": self.sparsity,
            "scores": dict(zip(self.words, (float(s) for s in self.scores))),
        }


@dataclass(frozen=True)
class ClassStats:
    count: int
    intra: float
    inter: float
    separation: float
    centroid: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ClusterStats:
    per_class: dict[str, ClassStats]
    intra: float
    inter: float
    separation: float

    def nearest_class(self, v) -> str:
        """POS class whose unit centroid has the highest cosine with ``v``."""
        u = normalize(v)
        return max(self.per_class, key=lambda k: float(u @ self.per_class[k].centroid))

    def to_dict(self) -> dict:
        return {
            "overall": {"intra": self.intra, "inter": self.inter, "separation": self.separation},
            "per_class": {
                k: {"count": s.count, "intra": s.intra, "inter": s.inter, "separation": s.separation}
                for k, s in self.per_class.items()
            },
        }


def _check_same_dim(vectors: Iterable[np.ndarray]) -> int | None:
    dim = None
    for v in vectors:
        if dim is None:
            dim = v.shape[0]
        elif v.shape[0] != dim:
            raise DimensionMismatch(f"expected dimension {dim}, got {v.shape[0]}")
    return dim


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValidationError("vector has non-finite entries")
    n = np.linalg.norm(v)
    if n <= EPS_NORM:
        raise ZeroVector(f"cannot normalize vector with norm {n:g}")
    return v / n


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    # clip guards the last ulp so the result stays a valid cosine
    return float(np.clip(normalize(a) @ normalize(b), -1.0, 1.0))


def activation_profile(
    relation_embedding,
    basis: BasisPrepositionSet,
    tau_act: float = DEFAULT_TAU_ACT,
    relation_label: str = "<R>",
) -> SimilarityProfile:
    r = np.asarray(relation_embedding, dtype=np.float64)
    B = basis.matrix()
    if r.shape != (B.shape[1],):
        raise DimensionMismatch(f"relation embedding has shape {r.shape}, basis dimension is {B.shape[1]}")
    unit_rows = B / np.linalg.norm(B, axis=1, keepdims=True)
    scores = np.clip(unit_rows @ normalize(r), -1.0, 1.0)
    active = int(np.count_nonzero(scores > tau_act))
    return SimilarityProfile(
        relation_label=relation_label,
        scores=scores,
        sparsity=1.0 - active / len(scores),
        words=basis.words,
        threshold=tau_act,
    )


def pos_cluster_separation(vocab: Sequence[VocabularyEntry]) -> ClusterStats:
    groups: dict[str, list[np.ndarray]] = {}
    for e in vocab:
        groups.setdefault(e.pos_tag.value, []).append(e.embedding)
    if len(groups) < 2:
        raise InsufficientData(f"need at least 2 POS classes, got {sorted(groups)}")
    small = [k for k, g in groups.items() if len(g) < 2]
    if small:
        raise InsufficientData(f"POS classes with fewer than 2 entries: {sorted(small)}")
    _check_same_dim(e.embedding for e in vocab)

    # sorted keys make the result independent of vocabulary order
    keys = sorted(groups)
    units = {k: np.stack([normalize(v) for v in groups[k]]) for k in keys}
    per_class = {}
    intra_sum = intra_n = inter_sum = inter_n = 0.0
    for k in keys:
        U = units[k]
        n = len(U)
        G = U @ U.T
        pair_sum = (G.sum() - np.trace(G)) / 2.0
        pairs = n * (n - 1) / 2.0
        others = np.concatenate([units[j] for j in keys if j != k])
        cross = U @ others.T
        intra = float(pair_sum / pairs)
        inter = float(cross.mean())
        per_class[k] = ClassStats(n, intra, inter, intra - inter, normalize(U.mean(axis=0)))
        intra_sum += pair_sum
        intra_n += pairs
    for a, b in itertools.combinations(keys, 2):
        inter_sum += float((units[a] @ units[b].T).sum())
        inter_n += len(units[a]) * len(units[b])
    intra = intra_sum / intra_n
    inter = inter_sum / inter_n
    return ClusterStats(per_class, float(intra), float(inter), float(intra - inter))


# -- vocabulary files -------------------------------------------------------------


def _decode_embedding(record: dict) -> np.ndarray:
    if "embedding_b64" in record:
        raw = base64.b64decode(record["embedding_b64"])
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return np.asarray(record["embedding"], dtype=np.float64)


def load_vocabulary(path) -> list[VocabularyEntry]:
    """Read a JSON-lines vocabulary: one ``{"word", "pos", "embedding"|"embedding_b64"}`` per line."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                entries.append(VocabularyEntry(rec["word"], POS(rec["pos"]), _decode_embedding(rec)))
            except (KeyError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad vocabulary record ({exc})") from exc
    _check_same_dim(e.embedding for e in entries)
    return entries


def save_vocabulary(entries: Iterable[VocabularyEntry], path, *, binary: bool = True) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            rec = {"word": e.word, "pos": e.pos_tag.value}
            if binary:
                rec["embedding_b64"] = base64.b64encode(e.embedding.astype("<f8").tobytes()).decode("ascii")
            else:
                rec["embedding"] = e.embedding.tolist()
            fh.write(json.dumps(rec) + "\n")
    return path


def vocabulary_from_backbone(backbone, tagged_words: Iterable[tuple[str, POS | str]]) -> list[VocabularyEntry]:
    """Pull input embeddings for ``(word, pos)`` pairs from an attached backbone.

    Words that tokenize to several pieces are mean-pooled by the backbone's
    ``word_embedding``.
    """
    out = []
    for word, pos in tagged_words:
        emb = backbone.word_embedding(word)
        out.append(VocabularyEntry(word, POS(pos), emb.detach().cpu().numpy().astype(np.float64)))
    return out
