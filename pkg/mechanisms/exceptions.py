"""
Domain errors raised by the mechanisms services.

Management commands translate these into exit codes (see decorators.py).
"""


class MechanismError(Exception):
    """Base class for every error raised by the services."""


class InvalidInstance(MechanismError, ValueError):
    """A valuation profile, prior, cost function or curve violates its invariants."""


class ZeroMassInterval(MechanismError, ValueError):
    """Conditional sampling was requested on an interval the distribution never hits."""


class IncompatibleMode(MechanismError):
    """The requested mode cannot be used with this instance."""


class NotDiscrete(IncompatibleMode):
    """Exact enumeration needs every marginal to be a finite atom list."""


class SupportTooLarge(IncompatibleMode):
    """Enumeration would exceed the configured cap."""


class GridMismatch(MechanismError, ValueError):
    """Two interim curves live on different grids."""


class NonMonotoneCurve(MechanismError, ValueError):
    """A payment rule was asked to integrate a non-monotone interim curve."""


class GammaOutOfRange(MechanismError, ValueError):
    """Blatant monotonization mixing weight outside [0, 1]."""


class ZeroInterimServed(MechanismError):
    """A served agent has zero interim allocation, so p/x is undefined."""


class NonBinaryValuation(MechanismError, ValueError):
    """The 0/1 reduction received a value other than 0 or 1."""


class ValueOutsideSupport(MechanismError, ValueError):
    """A reported value is not in the declared support list."""


class EntryBelowOne(MechanismError, ValueError):
    """The harmonic inequality only holds for entries >= 1."""


class ReductionConfigError(MechanismError):
    """A reduction was configured with a base algorithm it cannot accept."""


class ConfigError(MechanismError):
    """An experiment config or command-line argument failed validation."""


class AuditFailure(MechanismError):
    """At least one hard audit assertion failed; reports have been written."""
