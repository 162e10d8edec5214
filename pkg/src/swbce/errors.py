"""Exception hierarchy shared by every module.

Each error carries the CLI exit code it maps to, so the command line layer
never has to special-case individual exception types.
"""


class SwbceError(Exception):
    exit_code = 2


class DimensionMismatch(SwbceError, ValueError):
    pass


class EmptyLevelList(SwbceError, ValueError):
    pass


class InvalidSpec(SwbceError, ValueError):
    pass


class InvalidMap(SwbceError, ValueError):
    pass


class IoFailure(SwbceError, OSError):
    pass


class MalformedHeader(IoFailure):
    pass


class TruncatedData(IoFailure):
    pass


class UnsupportedMaxval(IoFailure):
    pass


class MissingPair(IoFailure):
    pass


class NonFiniteLoss(SwbceError, ArithmeticError):
    exit_code = 3
