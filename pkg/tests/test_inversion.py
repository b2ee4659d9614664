import numpy as np
import pytest
import torch

from reversion.backbone import parameter_digest
from reversion.embedding_space import BASIS_PREPOSITIONS, cosine_similarity
from reversion.errors import InsufficientVocabulary, InvalidConfig, NonFiniteLoss, UnknownWord, ValidationError
from reversion.inversion import ExemplarSet, InversionConfig, assemble_negatives, initialize_prompt, invert
from reversion.toy import ToyBackbone

from support import contrastive_gradient_flow, rigged_problem, symmetric_vocabulary

GRAY = np.full((32, 32), 0.5)


@pytest.fixture(scope="module")
def exemplars():
    ramp = np.tile(np.linspace(0, 1, 32), (32, 1))
    return ExemplarSet([GRAY, ramp], [["cat <R> box", "a cat <R> a box"], ["dog <R> basket"]], ["cat", "box", "dog", "basket"])


def test_initialize_from_and(toy):
    p = initialize_prompt(toy, "and")
    np.testing.assert_array_equal(p.embedding, toy.token_embedding("and").numpy())
    assert p.step_count == 0 and p.init_word == "and"
    np.testing.assert_array_equal(initialize_prompt(toy, "and").embedding, p.embedding)


def test_initialize_unknown_word(toy):
    with pytest.raises(UnknownWord):
        initialize_prompt(toy, "zeppelin")


# -- negatives ---------------------------------------------------------------------------


def test_negatives_forced_entities_fill_m(toy, toy_vocab):
    ex = ExemplarSet([GRAY], [["cat <R> box"]], ["cat", "box"])
    got = assemble_negatives(ex, toy_vocab, 2, np.random.default_rng(0))
    want = {toy.token_embedding(w).numpy().tobytes() for w in ("cat", "box")}
    assert {g.tobytes() for g in got} == want


def test_negatives_exclude_basis(toy_vocab, exemplars):
    basis = {e.embedding.tobytes() for e in toy_vocab if e.word in BASIS_PREPOSITIONS}
    for seed in range(20):
        got = assemble_negatives(exemplars, toy_vocab, 64, np.random.default_rng(seed))
        assert len(got) == 64
        assert not basis & {g.tobytes() for g in got}


def test_negatives_deterministic(toy_vocab, exemplars):
    a = assemble_negatives(exemplars, toy_vocab, 10, np.random.default_rng(4))
    b = assemble_negatives(exemplars, toy_vocab, 10, np.random.default_rng(4))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_negatives_preconditions(toy_vocab, exemplars):
    with pytest.raises(InvalidConfig):
        assemble_negatives(exemplars, toy_vocab, 3, np.random.default_rng(0))
    with pytest.raises(InsufficientVocabulary):
        assemble_negatives(exemplars, toy_vocab, 10_000, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        assemble_negatives(ExemplarSet([GRAY], [["cat <R> on"]], ["on"]), toy_vocab, 5, np.random.default_rng(0))


# -- config ------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw", [{"lambda_steer": -1}, {"steps": 0}, {"alpha": 0}, {"ablation": ("nope",)}, {"temperature": 0}, {"num_positives": 57}]
)
def test_config_validation(kw):
    with pytest.raises(InvalidConfig):
        InversionConfig(**kw)


def test_config_round_trip():
    c = InversionConfig(steps=5, ablation=("no_steering",))
    assert InversionConfig.from_dict(c.to_dict()) == c
    assert c.digest() == InversionConfig.from_dict(c.to_dict()).digest()
    with pytest.raises(InvalidConfig):
        InversionConfig.from_dict({"bogus": 1})


def test_exemplar_validation():
    with pytest.raises(ValidationError):
        ExemplarSet([GRAY], [["cat box"]], ["cat"])
    with pytest.raises(ValidationError):
        ExemplarSet([GRAY, GRAY], [["cat <R> box"]], ["cat"])


# -- the loop ----------------------------------------------------------------------------


def test_deterministic_and_frozen(toy, exemplars):
    cfg = InversionConfig(steps=30, seed=3)
    before = parameter_digest(toy)
    a = invert(exemplars, toy, cfg)
    b = invert(exemplars, toy, cfg)
    assert parameter_digest(toy) == before == a.backbone_digest
    np.testing.assert_array_equal(a.embedding, b.embedding)
    assert [r["loss"] for r in a.history] == [r["loss"] for r in b.history]
    assert a.step_count == 30 and len(a.history) == 30
    assert all(1 <= t <= toy.schedule.T for r in a.history for t in r["timesteps"])


def test_no_steering_equals_zero_weight(toy, exemplars):
    a = invert(exemplars, toy, InversionConfig(steps=40, ablation=("no_steering",)))
    b = invert(exemplars, toy, InversionConfig(steps=40, lambda_steer=0.0))
    assert [r["loss"] for r in a.history] == [r["loss"] for r in b.history]
    assert all(r["steer"] is None for r in a.history)
    np.testing.assert_array_equal(a.embedding, b.embedding)


def test_callback_sees_every_step(toy, exemplars):
    seen = []
    invert(exemplars, toy, InversionConfig(steps=5), callback=lambda s, R, rec: seen.append((s, R.shape)))
    assert seen == [(i, torch.Size([16])) for i in range(1, 6)]


def test_non_finite_loss_is_reported(exemplars):
    class Broken(ToyBackbone):
        def predict_noise(self, x_t, t, cond):
            return super().predict_noise(x_t, t, cond) * float("nan")

    with pytest.raises(NonFiniteLoss) as info:
        invert(exemplars, Broken(), InversionConfig(steps=3))
    assert info.value.diagnostics["step"] == 1


def test_rigged_recovery():
    bb, ex, v_star = rigged_problem()
    assert cosine_similarity(bb.word_embedding("and").numpy(), v_star) < 0.98
    p = invert(ex, bb, InversionConfig(lambda_steer=0.0), record_history=False)
    assert cosine_similarity(p.embedding, v_star) > 0.99


def test_single_positive_attractor(toy):
    pos, negs = symmetric_vocabulary()
    r0 = toy.word_embedding("and").numpy()
    oracle = contrastive_gradient_flow(r0, pos.embedding, [n.embedding for n in negs], gamma=0.2, lr=1e-2, steps=5000)
    assert cosine_similarity(oracle, pos.embedding) > 0.99

    ex = ExemplarSet([GRAY], [["cat <R> box"]], ["noun1", "verb1"])
    cfg = InversionConfig(lambda_denoise=0.0, lambda_steer=1.0, temperature=0.2, num_positives=1, num_negatives=30)
    p = invert(ex, toy, cfg, vocab=negs, positives=[pos], record_history=False)
    assert cosine_similarity(p.embedding, pos.embedding) > 0.99
    assert cosine_similarity(p.embedding, oracle) > 0.99
