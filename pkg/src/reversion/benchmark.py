"""Relation benchmark: ten relations, exemplar sets and 100 inference templates each.

On-disk layout, one directory per relation::

    <root>/<relation_id>/meta.json                 {"relation_id", "description", "entities_a", "entities_b"}
    <root>/<relation_id>/exemplars/<name>.png
    <root>/<relation_id>/exemplars/<name>.captions.json   {"descriptions": [...], "entities": [...]}
    <root>/<relation_id>/inference_templates.json  [{"entity_a", "entity_b", "rendered"}, ...]

Descriptions and templates spell the placeholder ``<R>``.
"""

from __future__ import annotations

import itertools
import json
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .backbone import PLACEHOLDER, PLACEHOLDER_DISPLAY, placeholder_count
from .errors import InvariantViolation, LayoutError, MissingPlaceholder, MultiplePlaceholders, ValidationError, WrongArity
from .inversion import ExemplarSet

RELATIONS: dict[str, str] = {
    "painted_on": "E_A is painted on (the surface of) E_B",
    "carved_by": "E_A is carved by / is made of the material of E_B",
    "shake_hands": "E_A shakes hands with E_B",
    "hug": "E_A hugs E_B",
    "back2back": "E_A sits back to back with E_B",
    "inside": "E_A is contained inside E_B",
    "on_top_of": "E_A on / is on top of E_B",
    "hanging_from": "E_A is hanging from E_B",
    "wrapped_in": "E_A is wrapped in E_B",
    "ride_on": "E_A rides (on) E_B",
}
TEMPLATES_PER_RELATION = 100
MIN_EXEMPLARS, MAX_EXEMPLARS = 4, 10
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class InferenceTemplate:
    entity_a: str
    entity_b: str

    def __post_init__(self):
        for e in (self.entity_a, self.entity_b):
            if not e or not e.strip():
                raise ValidationError("template entities must be non-empty")
            if placeholder_count(e):
                raise ValidationError(f"entity {e!r} contains the placeholder")

    @property
    def rendered(self) -> str:
        return f"{self.entity_a} {PLACEHOLDER} {self.entity_b}"

    @property
    def entity_prompt(self) -> str:
        """Entity-only prompt used by the entity accuracy metric."""
        return f"{self.entity_a}, {self.entity_b}"

    def to_dict(self) -> dict:
        return {"entity_a": self.entity_a, "entity_b": self.entity_b, "rendered": self.rendered}


@dataclass(frozen=True)
class BenchmarkRelation:
    relation_id: str
    description: str
    exemplars: ExemplarSet
    inference_templates: tuple[InferenceTemplate, ...]
    entities_a: tuple[str, ...] = ()
    entities_b: tuple[str, ...] = ()
    root: Path | None = None

    def __post_init__(self):
        n = len(self.exemplars)
        if not MIN_EXEMPLARS <= n <= MAX_EXEMPLARS:
            raise InvariantViolation(self.relation_id, f"{n} exemplar images, expected {MIN_EXEMPLARS}-{MAX_EXEMPLARS}")
        if len(self.inference_templates) != TEMPLATES_PER_RELATION:
            raise InvariantViolation(
                self.relation_id, f"{len(self.inference_templates)} inference templates, expected {TEMPLATES_PER_RELATION}"
            )

    def image_names(self) -> list[str]:
        return [Path(p).name for p in self.exemplars.images]

    def to_dict(self) -> dict:
        """Structure with image references relative to the relation directory."""
        return {
            "relation_id": self.relation_id,
            "description": self.description,
            "entities_a": list(self.entities_a),
            "entities_b": list(self.entities_b),
            "exemplars": [
                {"image": name, "descriptions": list(descs)}
                for name, descs in zip(self.image_names(), self.exemplars.descriptions)
            ],
            "entity_words": list(self.exemplars.entity_words),
            "inference_templates": [t.to_dict() for t in self.inference_templates],
        }


def expand_templates(entities_a: Sequence[str], entities_b: Sequence[str]) -> list[InferenceTemplate]:
    """Row-major (entity_a-major) cross product of two 10-entity lists."""
    for name, lst in (("entities_a", entities_a), ("entities_b", entities_b)):
        if len(lst) != 10:
            raise WrongArity(f"{name} must list exactly 10 entities, got {len(lst)}")
        if len(set(lst)) != len(lst):
            raise ValidationError(f"{name} has duplicate entries")
    return [InferenceTemplate(a, b) for a, b in itertools.product(entities_a, entities_b)]


def substitute(template, relation_token: str) -> str:
    text = template.rendered if isinstance(template, InferenceTemplate) else template
    n = placeholder_count(text)
    if n == 0:
        raise MissingPlaceholder(f"no placeholder in {text!r}")
    if n > 1:
        raise MultiplePlaceholders(f"{n} placeholders in {text!r}")
    spelling = PLACEHOLDER if PLACEHOLDER in text else PLACEHOLDER_DISPLAY
    return text.replace(spelling, relation_token, 1)


# -- loading -------------------------------------------------------------------------


def _read_json(path: Path, relation_id: str):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise LayoutError(f"{relation_id}: missing {path.name} ({path})") from None
    except json.JSONDecodeError as exc:
        raise InvariantViolation(relation_id, f"{path} is not valid JSON: {exc}") from exc


def load_relation(rel_dir) -> BenchmarkRelation:
    rel_dir = Path(rel_dir)
    rid = rel_dir.name
    if rid not in RELATIONS:
        raise LayoutError(f"unknown relation directory {rid!r}")
    meta = _read_json(rel_dir / "meta.json", rid)
    if meta.get("relation_id") != rid:
        raise InvariantViolation(rid, f"meta.json names relation {meta.get('relation_id')!r}")

    ex_dir = rel_dir / "exemplars"
    if not ex_dir.is_dir():
        raise LayoutError(f"{rid}: missing exemplars/ directory")
    images = sorted(p for p in ex_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    captions = sorted(ex_dir.glob("*.captions.json"))
    image_stems = {p.stem for p in images}
    for cap in captions:
        stem = cap.name[: -len(".captions.json")]
        if stem not in image_stems:
            raise InvariantViolation(rid, f"{cap.name} has no matching image file")

    descriptions, entity_words = [], set()
    for img in images:
        cap_path = img.with_name(img.stem + ".captions.json")
        if not cap_path.exists():
            raise InvariantViolation(rid, f"image {img.name} has no captions file")
        cap = _read_json(cap_path, rid)
        descs = cap.get("descriptions") or []
        if not descs:
            raise InvariantViolation(rid, f"{cap_path.name} lists no descriptions")
        for d in descs:
            if placeholder_count(d) != 1:
                raise InvariantViolation(rid, f"{cap_path.name}: description {d!r} must contain exactly one {PLACEHOLDER}")
        descriptions.append(tuple(descs))
        entity_words.update(cap.get("entities") or [])
    if not MIN_EXEMPLARS <= len(images) <= MAX_EXEMPLARS:
        raise InvariantViolation(rid, f"{len(images)} exemplar images, expected {MIN_EXEMPLARS}-{MAX_EXEMPLARS}")
    if not entity_words:
        raise InvariantViolation(rid, "captions declare no entity words")

    raw_templates = _read_json(rel_dir / "inference_templates.json", rid)
    if not isinstance(raw_templates, list):
        raise InvariantViolation(rid, "inference_templates.json must hold a list")
    templates = []
    for i, rec in enumerate(raw_templates):
        try:
            t = InferenceTemplate(rec["entity_a"], rec["entity_b"])
        except (KeyError, TypeError, ValidationError) as exc:
            raise InvariantViolation(rid, f"inference template {i} is malformed: {exc}") from exc
        rendered = rec.get("rendered", t.rendered)
        if placeholder_count(rendered) != 1 or rendered != t.rendered:
            raise InvariantViolation(rid, f"inference template {i} renders as {rendered!r}, expected {t.rendered!r}")
        templates.append(t)

    try:
        exemplars = ExemplarSet(tuple(images), tuple(descriptions), tuple(entity_words))
    except ValidationError as exc:
        raise InvariantViolation(rid, str(exc)) from exc
    return BenchmarkRelation(
        relation_id=rid,
        description=meta.get("description", RELATIONS[rid]),
        exemplars=exemplars,
        inference_templates=tuple(templates),
        entities_a=tuple(meta.get("entities_a", ())),
        entities_b=tuple(meta.get("entities_b", ())),
        root=rel_dir,
    )


def _relation_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise LayoutError(f"benchmark root {root} is not a directory")
    dirs = {p.name: p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")}
    missing = [r for r in RELATIONS if r not in dirs]
    unknown = sorted(set(dirs) - set(RELATIONS))
    if missing or unknown:
        raise LayoutError(f"benchmark at {root}: missing relations {missing}, unknown directories {unknown}")
    return [dirs[r] for r in RELATIONS]


def load_benchmark(root) -> list[BenchmarkRelation]:
    """Load and validate all ten relations, in canonical order."""
    return [load_relation(d) for d in _relation_dirs(Path(root))]


def validate_benchmark(root) -> list[str]:
    """Every problem found, one message per relation (empty when valid)."""
    try:
        dirs = _relation_dirs(Path(root))
    except LayoutError as exc:
        return [str(exc)]
    problems = []
    for d in dirs:
        try:
            load_relation(d)
        except ValidationError as exc:
            problems.append(str(exc))
    return problems


def save_relation(rel: BenchmarkRelation, root) -> Path:
    rel_dir = Path(root) / rel.relation_id
    ex_dir = rel_dir / "exemplars"
    ex_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "relation_id": rel.relation_id,
        "description": rel.description,
        "entities_a": list(rel.entities_a),
        "entities_b": list(rel.entities_b),
    }
    (rel_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    # entity words are stored once, on the first caption file
    for i, (img, descs) in enumerate(zip(rel.exemplars.images, rel.exemplars.descriptions)):
        src = Path(img)
        dst = ex_dir / src.name
        if src.resolve() != dst.resolve():
            shutil.copyfile(src, dst)
        cap = {"descriptions": list(descs), "entities": list(rel.exemplars.entity_words) if i == 0 else []}
        dst.with_name(dst.stem + ".captions.json").write_text(json.dumps(cap, indent=2) + "\n", encoding="utf-8")
    templates = [t.to_dict() for t in rel.inference_templates]
    (rel_dir / "inference_templates.json").write_text(json.dumps(templates, indent=1) + "\n", encoding="utf-8")
    return rel_dir


def save_benchmark(relations: Sequence[BenchmarkRelation], root) -> Path:
    root = Path(root)
    for rel in relations:
        save_relation(rel, root)
    return root
