"""Exception hierarchy shared across the package."""


class TFCSRError(Exception):
    """Base class for all package errors."""


class SpecificationError(TFCSRError, ValueError):
    """Inconsistent network specification."""


class DimensionError(TFCSRError, ValueError):
    """Input shape does not match the network."""


class ContractError(TFCSRError, ValueError):
    """A documented precondition was violated."""


class FormatError(TFCSRError, ValueError):
    """Bad magic number in an IDX stream."""


class LengthError(TFCSRError, ValueError):
    """IDX payload shorter than its header claims."""


class ConsistencyError(TFCSRError, ValueError):
    """Two related inputs disagree (image/label counts, state shapes)."""


class ProtocolError(TFCSRError, ValueError):
    """Dataset cannot be split into the requested task protocol."""


class EmptyMemoryError(TFCSRError, LookupError):
    """Sampling from an empty replay buffer."""


class AssemblyError(TFCSRError, ValueError):
    """Run record assembled from an incomplete set of task fragments."""


class ConfigError(TFCSRError, ValueError):
    """Invalid run configuration."""
