"""Exception hierarchy shared by every module."""


class CareAlgebraError(Exception):
    """Base class for all package errors."""


class ShapeError(CareAlgebraError, ValueError):
    pass


class ConfigurationError(CareAlgebraError, ValueError):
    pass


class NonFiniteError(CareAlgebraError, FloatingPointError):
    """An operation produced NaN or Inf from finite inputs."""


class OracleViolationError(CareAlgebraError):
    """The loss handed to the gradient checker is not deterministic."""


class VocabularyError(CareAlgebraError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UndefinedSimilarityError(CareAlgebraError, ValueError):
    pass


class EmptySequenceError(CareAlgebraError, ValueError):
    pass


class ValidationError(CareAlgebraError, ValueError):
    """Input data or configuration failed validation."""


class MalformedLineError(ValidationError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class TooFewVisitsError(ValidationError):
    pass


class VisitOrderError(ValidationError):
    pass


class DuplicatePatientError(ValidationError):
    pass


class DegenerateBatchError(CareAlgebraError, ValueError):
    """A batch carries no labeled visits, so the loss is undefined."""


class ProtocolError(CareAlgebraError, RuntimeError):
    pass


class ModelFileError(CareAlgebraError, ValueError):
    """Base for model-file load failures."""


class FormatVersionError(ModelFileError):
    pass


class ModelParseError(ModelFileError):
    pass


class VocabularyMismatchError(ModelFileError):
    pass


class UndefinedMetricError(CareAlgebraError, ValueError):
    pass


class EvaluationError(CareAlgebraError, RuntimeError):
    pass
