"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: usage/precondition
violations exit 2, I/O and file-format problems exit 3, memory-budget
violations exit 4, and training/numeric failures exit 1.
"""


class UsageError(Exception):
    """Invalid flags, config keys, or argument combinations."""


class DataFormatError(ValueError):
    """A data file (CSV, feature file) is malformed."""


class WeightsFileError(ValueError):
    """A weights file has a bad magic, version, structure, or checksum."""


class BudgetError(RuntimeError):
    """A requested load would not fit inside the resident-parameter budget."""


class TrainingError(RuntimeError):
    """Training produced a non-finite value or otherwise failed numerically."""
