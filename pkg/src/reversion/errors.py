"""Exception hierarchy shared by every reversion module."""


class ReversionError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ReversionError, ValueError):
    """Bad input detected before any compute. The CLI maps these to exit code 2."""


class ZeroVector(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class NonPositiveTemperature(ValidationError):
    pass


class EmptyPositives(ValidationError):
    pass


class EmptyNegatives(ValidationError):
    pass


class NegativeWeight(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class InvalidAlpha(ValidationError):
    pass


class InvalidT(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class UnknownWord(ValidationError, KeyError):
    def __str__(self):
        # KeyError quotes its message; keep it readable.
        return Exception.__str__(self)


class MissingPlaceholder(ValidationError):
    pass


class MultiplePlaceholders(MissingPlaceholder):
    pass


class SequenceTooLong(ValidationError):
    pass


class UnsupportedGuidance(ReversionError):
    pass


class InsufficientVocabulary(ValidationError):
    pass


class NonFiniteLoss(ReversionError, FloatingPointError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CorruptCheckpoint(ReversionError):
    pass


class LayoutError(ValidationError):
    pass


class InvariantViolation(ValidationError):
    def __init__(self, relation_id, detail):
        super().__init__(f"{relation_id}: {detail}")
        self.relation_id = relation_id
        self.detail = detail


class WrongArity(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class DegenerateFeatures(ValidationError):
    pass


class UnknownRelation(ValidationError):
    pass


class IncompleteScores(ValidationError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"missing scores for relation(s): {', '.join(self.missing)}")


class BackboneMismatchWarning(UserWarning):
    """Checkpoint was produced against a backbone with a different parameter digest."""
