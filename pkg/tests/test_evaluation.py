import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reversion.errors import DegenerateFeatures, EmptyInput, IncompleteScores, InsufficientData, UnknownRelation
from reversion.evaluation import (
    ClassifierBundle,
    EvaluationReport,
    RelationScore,
    ToyImageTextScorer,
    ToyRelationExtractor,
    emit_report,
    entity_accuracy,
    load_report,
    relation_accuracy,
    relation_counts,
    train_relation_classifiers,
)

RIDS = ("painted_on", "carved_by", "shake_hands", "hug", "back2back", "inside", "on_top_of", "hanging_from", "wrapped_in", "ride_on")


class TableScorer:
    """Images are keys into a table of embeddings; every text maps to one fixed vector."""

    reentrant = True

    def __init__(self, table, text_vec):
        self.table, self.text_vec = table, np.asarray(text_vec, dtype=float)

    def image_embed(self, image):
        return self.table[image]

    def text_embed(self, text):
        return self.text_vec


class TableExtractor:
    reentrant = True

    def __init__(self, table, dim):
        self.table, self.feature_dim = table, dim

    def extract(self, image):
        return self.table[image]


def _cos_vec(c):
    return np.array([c, np.sqrt(1 - c * c)])


# -- entity accuracy ---------------------------------------------------------------------


def test_entity_identical_and_orthogonal():
    same = TableScorer({i: np.array([0.0, 2.0]) for i in range(3)}, [0.0, 1.0])
    assert entity_accuracy([0, 1, 2], "cat", "box", same) == pytest.approx(1.0)
    ortho = TableScorer({0: np.array([1.0, 0.0])}, [0.0, 1.0])
    assert entity_accuracy([0], "cat", "box", ortho) == 0.0


def test_entity_arithmetic_mean():
    scorer = TableScorer({i: _cos_vec(c) for i, c in enumerate((0.2, 0.4, 0.6))}, [1.0, 0.0])
    assert entity_accuracy([0, 1, 2], "cat", "box", scorer) == pytest.approx(0.4, abs=1e-12)


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=20))
def test_entity_matches_mean_oracle(cosines):
    scorer = TableScorer({i: _cos_vec(c) for i, c in enumerate(cosines)}, [1.0, 0.0])
    got = entity_accuracy(list(range(len(cosines))), "a", "b", scorer)
    assert got == pytest.approx(sum(cosines) / len(cosines), abs=1e-12)
    assert -1.0 <= got <= 1.0


def test_entity_empty():
    with pytest.raises(EmptyInput):
        entity_accuracy([], "a", "b", TableScorer({}, [1.0]))


def test_entity_prompt_text():
    seen = []

    class Spy(TableScorer):
        def text_embed(self, text):
            seen.append(text)
            return super().text_embed(text)

    entity_accuracy([0], "cat", "box", Spy({0: np.ones(2)}, [1.0, 1.0]))
    assert seen == ["cat, box"]


# -- classifiers ---------------------------------------------------------------------------


def _labeled(points, labels):
    table = {i: [p] for i, p in enumerate(points)}
    return [(i, lab) for i, lab in enumerate(labels)], TableExtractor(table, len(points[0]))


def test_two_separable_classes():
    rng = np.random.default_rng(0)
    pts = np.vstack([rng.normal([-3, 0], 0.5, (20, 2)), rng.normal([3, 0], 0.5, (20, 2))])
    labels = ["left"] * 20 + ["right"] * 20
    data, ext = _labeled(list(pts), labels)
    bundle = train_relation_classifiers(data, ext)
    assert [bundle.predict(i, ext) for i, _ in data] == labels


def test_one_class_rejected():
    data, ext = _labeled([np.array([0.0, 1.0]), np.array([1.0, 0.0])], ["a", "a"])
    with pytest.raises(InsufficientData):
        train_relation_classifiers(data, ext)


def test_identical_constant_features_rejected():
    data, ext = _labeled([np.ones(2)] * 4, ["a", "a", "b", "b"])
    with pytest.raises(DegenerateFeatures):
        train_relation_classifiers(data, ext)


def _blobs(rng, n_per, sigma=1.0):
    centers = np.array([[0, 0], [5, 0], [0, 5], [5, 5]], dtype=float) * sigma
    X = np.vstack([rng.normal(c, sigma, (n_per, 2)) for c in centers])
    y = [f"r{k}" for k in range(4) for _ in range(n_per)]
    return X, y, centers


def test_four_blobs_held_out():
    rng = np.random.default_rng(42)
    Xtr, ytr, _ = _blobs(rng, 60)
    Xte, yte, _ = _blobs(rng, 100)
    data, ext = _labeled(list(Xtr), ytr)
    bundle = train_relation_classifiers(data, ext)
    svm_acc = np.mean([bundle.predict_pooled(x) == y for x, y in zip(Xte, yte)])
    # nearest-centroid oracle on the same split
    cents = {c: Xtr[np.array(ytr) == c].mean(0) for c in sorted(set(ytr))}
    nc_acc = np.mean([min(cents, key=lambda c: np.linalg.norm(x - cents[c])) == y for x, y in zip(Xte, yte)])
    assert nc_acc > 0.95
    assert svm_acc > 0.95


# -- relation accuracy ----------------------------------------------------------------------


ONE_HOT = ClassifierBundle(("a", "b"), np.eye(2), np.zeros(2))


def _onehot_extractor(labels):
    return TableExtractor({i: [np.eye(2)[0 if lab == "a" else 1]] for i, lab in enumerate(labels)}, 2)


def test_relation_all_none_and_seven():
    ext = _onehot_extractor(["a"] * 10)
    assert relation_accuracy(list(range(10)), "a", ONE_HOT, ext) == 1.0
    assert relation_accuracy(list(range(10)), "b", ONE_HOT, ext) == 0.0
    labels = ["a"] * 7 + ["b"] * 3
    assert relation_accuracy(list(range(10)), "a", ONE_HOT, _onehot_extractor(labels)) == pytest.approx(0.7)


@given(st.lists(st.sampled_from("ab"), min_size=1, max_size=40))
def test_relation_matches_counting_oracle(labels):
    ext = _onehot_extractor(labels)
    correct, total = relation_counts(list(range(len(labels))), "a", ONE_HOT, ext)
    assert (correct, total) == (labels.count("a"), len(labels))


def test_relation_empty_extraction_counts_as_wrong():
    ext = TableExtractor({0: [np.array([1.0, 0.0])], 1: []}, 2)
    assert relation_accuracy([0, 1], "a", ONE_HOT, ext) == 0.5


def test_relation_preconditions():
    ext = _onehot_extractor(["a"])
    with pytest.raises(UnknownRelation):
        relation_accuracy([0], "zzz", ONE_HOT, ext)
    with pytest.raises(EmptyInput):
        relation_accuracy([], "a", ONE_HOT, ext)


# -- reports ---------------------------------------------------------------------------------


def _report():
    return EvaluationReport({rid: RelationScore(0.1 * k, k, 10) for k, rid in enumerate(RIDS)}, {"seed": 0})


def test_report_csv_rows(tmp_path):
    _, csv_path = emit_report(_report(), tmp_path, relations=RIDS)
    rows = list(csv.reader(csv_path.open()))
    assert rows[0] == ["relation_id", "entity_score", "relation_accuracy"]
    assert len(rows) == 11
    assert float(rows[4][2]) == pytest.approx(0.3)


def test_report_missing_relation(tmp_path):
    rep = _report()
    del rep.scores["hug"]
    with pytest.raises(IncompleteScores, match="hug"):
        emit_report(rep, tmp_path, relations=RIDS)


def test_report_json_round_trip(tmp_path):
    rep = _report()
    json_path, _ = emit_report(rep, tmp_path)
    back = load_report(json_path)
    assert back.to_dict() == rep.to_dict()
    assert json.loads(json_path.read_text())["config_digest"] == rep.config_digest


# -- toy plug-ins ------------------------------------------------------------------------------


def test_toy_extractor_blank_image_yields_nothing():
    ext = ToyRelationExtractor()
    assert ext.extract(np.full((32, 32), 0.3)) == []
    feats = ext.extract(np.tile(np.linspace(0, 1, 32), (32, 1)))
    assert len(feats) == 2 and all(f.shape == (ext.feature_dim,) for f in feats)


def test_toy_scorer_unit_vectors(toy):
    s = ToyImageTextScorer(toy)
    assert np.linalg.norm(s.image_embed(np.full((32, 32), 0.7))) == pytest.approx(1.0)
    assert np.linalg.norm(s.text_embed("cat, box")) == pytest.approx(1.0)
    with pytest.raises(EmptyInput):
        s.text_embed(", .")
