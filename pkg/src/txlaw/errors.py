"""Exception types shared across the engine."""


class TxlawError(Exception):
    """Base class for engine errors."""


class InputError(TxlawError):
    """Malformed spectrum data or config file."""


class DomainError(TxlawError):
    """Parameters outside the validated domain (e.g. |z| inside the excluded band)."""


class SolverError(TxlawError):
    """Master-equation solve failed: no admissible root or no convergence."""


class BracketingError(TxlawError):
    """Support scan could not bracket an edge at the requested resolution."""


class TableTooCoarseError(TxlawError):
    """Density table resolution insufficient for the requested tolerance."""
