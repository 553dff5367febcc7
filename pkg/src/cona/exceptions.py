"""Exception hierarchy shared by the whole package.

Two broad families matter to callers: ``DataError`` for malformed or
incompatible inputs (files, ids, shapes declared in headers) and
``NumericError`` for violations of the numeric contracts (non-finite values,
zero rows, bad temperatures).  The command-line layer maps these families to
distinct exit codes.
"""

from __future__ import annotations


class ConaError(Exception):
    """Base class for every error raised by this package."""


class DataError(ConaError):
    """Bad or incompatible input data (files, ids, header shapes)."""


class NumericError(ConaError):
    """A numeric contract was violated."""


class ShapeMismatch(NumericError):
    """Operands have incompatible shapes."""


class NonFiniteValue(NumericError):
    """A NaN or infinity appeared where finite values are required."""


class ZeroRow(NumericError):
    """A row with (near-)zero norm cannot be L2-normalized."""


class BadTemperature(NumericError):
    """Softmax temperature must be strictly positive."""


class MeaninglessCombination(ConaError):
    """The requested (learning type, strategy) cell is excluded from the grid."""


class UnknownRecipe(ConaError):
    """No preset loss recipe with that name exists."""


class BadParts(ConaError):
    """Requested number of encoder parts is out of range."""


class IncompatibleShapes(DataError):
    """Encoder parameter shapes do not line up for the requested copy."""


class StepOutOfRange(NumericError):
    """Schedule queried outside [0, total_steps]."""


class EmptyIndex(DataError):
    """The retrieval index contains no items."""


class DuplicateId(DataError):
    """Two index items share an id."""


class UnknownGroundTruthId(DataError):
    """A ground-truth id is absent from the index."""


class NotNormalized(DataError):
    """Embedding rows are not unit-norm within tolerance."""


class IoError(DataError):
    """A file is missing, truncated, or malformed."""
