"""Exception types raised across the package."""


class SpecDecError(Exception):
    """Base class for every error raised by specdec."""


class InvalidDistribution(SpecDecError, ValueError):
    pass


class DimensionMismatch(SpecDecError, ValueError):
    pass


class NoResidualMass(SpecDecError, ValueError):
    pass


class WidthOutOfRange(SpecDecError, ValueError):
    pass


class TokenOutOfVocab(SpecDecError, ValueError):
    pass


class BadParams(SpecDecError, ValueError):
    pass


class UnsupportedArity(SpecDecError, ValueError):
    pass


class EpsOutOfDomain(SpecDecError, ValueError):
    pass


class EmptyHistory(SpecDecError, ValueError):
    pass


class InconsistentPair(SpecDecError, ValueError):
    pass


class EmptyRun(SpecDecError, ValueError):
    pass


class DomainError(SpecDecError, ValueError):
    pass


class ScenarioMismatch(SpecDecError, ValueError):
    pass


class ConfigError(SpecDecError, ValueError):
    pass


class IoError(SpecDecError, OSError):
    """File access failure; the message always names the offending path."""
