"""
Exception hierarchy shared by every adaptorx package
"""


class AdaptorError(Exception):
    """Base class of all adaptorx errors"""


# Tensor backend
class DimensionError(AdaptorError, ValueError):
    """Input shapes are invalid for a primitive"""


class UnsupportedOpError(AdaptorError, NotImplementedError):
    """Unknown primitive op id"""


class UndefinedMeanError(AdaptorError, ValueError):
    """Every position of a loss was ignored"""


class TargetIndexError(AdaptorError, IndexError):
    """A target id lies outside the logits' class range"""


class RankError(AdaptorError, ValueError):
    """Backward was called on a non-scalar tensor"""


class UninitializedGradientError(AdaptorError, RuntimeError):
    """An optimizer step met a parameter without a gradient"""


# Model and registry
class ConfigError(AdaptorError, ValueError):
    """Invalid configuration value or unknown configuration key"""


class LengthError(AdaptorError, ValueError):
    """Sequence longer than the model's max_len"""


class RegistrationError(AdaptorError, ValueError):
    """Objective registered twice or merge conflict"""


class CompatibilityError(AdaptorError, ValueError):
    """Head kind does not fit the model or the batch"""


class RoutingError(AdaptorError, KeyError):
    """No head is registered for an objective, or a batch reached the wrong one"""


# Objectives and data
class EncodingError(AdaptorError, ValueError):
    """A raw example cannot be encoded"""


class AlignmentError(AdaptorError, ValueError):
    """Token labels do not align with tokens"""


class VocabularyError(AdaptorError, KeyError):
    """Unknown label string"""


class EvaluationError(AdaptorError, RuntimeError):
    """Evaluation was requested on a split without data"""


class DataError(AdaptorError, ValueError):
    """Missing, empty or misaligned data source"""


class SpecError(AdaptorError, ValueError):
    """Invalid synthetic domain definition"""


class ScheduleExhausted(AdaptorError, RuntimeError):
    """The schedule has no further objectives to sample"""


# Training and persistence
class NonFiniteLossError(AdaptorError, FloatingPointError):
    """A training loss became NaN or infinite"""


class CorruptionError(AdaptorError, OSError):
    """A checkpoint archive is inconsistent"""


class InputError(AdaptorError, ValueError):
    """Invalid metric inputs"""
