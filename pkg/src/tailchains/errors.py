"""Exception hierarchy.

Every error raised by the package derives from :class:`TailChainError`, so
callers (and the CLI) can catch one type and still recover the module that
failed through :attr:`TailChainError.module`.
"""


class TailChainError(Exception):
    module = "tailchains"


# measures
class ZeroVector(TailChainError, ValueError):
    module = "measures"


class DomainError(TailChainError, ValueError):
    module = "measures"


class BadWeights(TailChainError, ValueError):
    module = "measures"


# admissible
class NotCanonical(TailChainError, ValueError):
    module = "admissible"


class NotAdmissible(TailChainError, ValueError):
    module = "admissible"


# tailchain
class KernelMismatch(TailChainError, ValueError):
    module = "tailchain"


class UnboundedFunctional(TailChainError, ValueError):
    module = "tailchain"


class UnknownAngle(TailChainError, KeyError):
    module = "tailchain"

    def __str__(self):
        return Exception.__str__(self)


# markov_engine
class NumericOverflow(TailChainError, OverflowError):
    module = "markov_engine"


class NoExceedances(TailChainError, ValueError):
    module = "markov_engine"


class DegenerateSample(TailChainError, ValueError):
    module = "markov_engine"


# models
class NotNormalized(TailChainError, ValueError):
    module = "models"


class NoContraction(TailChainError, ValueError):
    module = "models"


class RejectionStall(TailChainError, RuntimeError):
    module = "models"


class UnsupportedAngle(TailChainError, ValueError):
    module = "models"


# diagnostics
class DimensionMismatch(TailChainError, ValueError):
    module = "diagnostics"


class TooFewWindows(TailChainError, ValueError):
    module = "diagnostics"


# cli / config
class ConfigError(TailChainError, ValueError):
    module = "cli"
