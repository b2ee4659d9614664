"""Relation-prompt inversion: learn one token embedding that captures the relation shared by a set of exemplar images."""

from .backbone import PLACEHOLDER, NoiseSchedule, TextEncoding, generate, parameter_digest
from .embedding_space import (
    BASIS_PREPOSITIONS,
    POS,
    BasisPrepositionSet,
    VocabularyEntry,
    activation_profile,
    cosine_similarity,
    normalize,
    pos_cluster_separation,
)
from .inversion import ExemplarSet, InversionConfig, RelationPrompt, assemble_negatives, initialize_prompt, invert
from .losses import ContrastiveBatch, DenoisePair, composite_objective, denoise_mse, preliminary_contrastive, steering_loss
from .schedule_sampler import build_distribution, density, sample

__version__ = "0.1.0"
