"""Exception types shared across the package."""


class EhcapError(Exception):
    """Base class for all package errors."""


class ConfigError(EhcapError, ValueError):
    """Invalid model or experiment configuration."""


class InfeasibleInput(EhcapError, ValueError):
    """An input symbol costs more energy than is available."""


class AlphabetTooLarge(EhcapError):
    """A policy or state alphabet exceeds the configured cap."""


class IncompatibleDimensions(EhcapError, ValueError):
    """Array shapes do not agree."""


class NotStochastic(EhcapError, ValueError):
    """A matrix that should be row-stochastic is not."""


class BudgetExceeded(EhcapError):
    """An exact computation would exceed its size budget."""


class NonConvergence(EhcapError):
    """An iterative solver did not reach its tolerance."""


class NoErgodicityCertificate(EhcapError):
    """Rate estimation requested without an ergodicity certificate."""


class ErgodicityLost(EhcapError):
    """An optimizer iterate left the ergodic class."""


class RequiresIidHarvest(EhcapError, ValueError):
    """The operation is only defined for i.i.d. harvest processes."""
