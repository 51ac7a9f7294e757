"""Exception taxonomy shared by every module.

Config-class errors (bad config file, bad manifest, bad tensor file) map to
CLI exit code 1; everything else raised from library code maps to exit 2.
"""


class CaconError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CaconError):
    """Operand dimensions are incompatible. Message lists both shapes."""


class DomainError(CaconError):
    """Operand value outside the mathematical domain of the operation."""


class DegenerateInputError(CaconError):
    """Input is structurally valid but degenerate (zero vector, tiny image)."""


class ContractError(CaconError):
    """Caller violated an operation precondition."""


class NumericsError(CaconError):
    """Non-finite value produced; names the offending operation."""


class ConfigError(CaconError):
    """Invalid configuration file, value, or missing config-level resource."""


class ManifestError(ConfigError):
    """Manifest rejected; message carries the 1-based line number."""


class FormatError(ConfigError):
    """Binary tensor file malformed (magic, version, dtype, truncation)."""


class MissingImageError(CaconError):
    """An image reference does not resolve to a known image."""


class ProtocolError(CaconError):
    """Evaluation protocol precondition failed (empty split, leakage, cap)."""


class RunFailure(CaconError):
    """Training or evaluation aborted at runtime; message carries context."""
