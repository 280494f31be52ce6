"""Exception types raised across the package."""


class CprError(Exception):
    """Base class for all cprlab errors."""


class ZeroNorm(CprError, ValueError):
    pass


class DimensionMismatch(CprError, ValueError):
    pass


class InvalidArchitecture(CprError, ValueError):
    pass


class LabelOutOfRange(CprError, ValueError):
    pass


class EmptyClass(CprError, ValueError):
    pass


class EmptyInput(CprError, ValueError):
    pass


class InvalidNu(CprError, ValueError):
    pass


class DegenerateDissimilarity(CprError, ValueError):
    """DS_k <= 0: every prototype is parallel to the others."""


class BatchTooSmall(CprError, ValueError):
    pass


class InvalidParam(CprError, ValueError):
    pass


class FractionTooSmall(CprError, ValueError):
    pass


class ParseError(CprError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class InconsistentWidth(ParseError):
    pass


class UnknownLabel(CprError, KeyError):
    pass


class PrototypesUninitialized(CprError, RuntimeError):
    pass


class NonFiniteLoss(CprError, FloatingPointError):
    def __init__(self, epoch, batch, what="loss"):
        super().__init__(f"non-finite {what} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class ConfigError(CprError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
