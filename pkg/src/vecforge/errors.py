"""Exception types shared across the package.

Every failure mode named in an operation contract gets its own class so
callers (and the CLI exit-code mapping) can dispatch on type.
"""


class VecforgeError(Exception):
    """Base class for all vecforge errors."""


class ShapeMismatch(VecforgeError):
    pass


class DtypeMismatch(VecforgeError):
    pass


class EmptyTensor(VecforgeError):
    pass


class EmptyInput(VecforgeError):
    pass


class InvalidP(VecforgeError):
    pass


class SchemaMismatch(VecforgeError):
    pass


class BaseMismatch(VecforgeError):
    pass


class TooFewTasks(VecforgeError):
    pass


class NotNormalized(VecforgeError):
    pass


class AlreadyNormalized(VecforgeError):
    pass


class EmptyBatch(VecforgeError):
    pass


class InvalidSpec(VecforgeError):
    pass


class InvalidHyper(VecforgeError):
    pass


class InvalidRate(VecforgeError):
    pass


class InvalidMeta(VecforgeError):
    pass


class InvalidMask(VecforgeError):
    pass


class IoFailure(VecforgeError):
    pass


class CorruptHeader(VecforgeError):
    pass


class OffsetOverlap(VecforgeError):
    pass


class TruncatedPayload(VecforgeError):
    pass


class NonFiniteValue(VecforgeError):
    pass


class EmptyLayer(VecforgeError):
    pass
