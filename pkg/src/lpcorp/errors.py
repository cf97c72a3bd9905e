"""Exception hierarchy.

Every error raised deliberately by the package derives from ``LpcorpError`` so
callers (and the command line) can map failures onto exit codes.
"""


class LpcorpError(Exception):
    exit_code = 1


class UsageError(LpcorpError):
    exit_code = 2


class DataError(LpcorpError, ValueError):
    exit_code = 3


class IngestionError(DataError):
    pass


class ConvergenceError(LpcorpError):
    exit_code = 3

    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class ModelMismatchError(DataError):
    pass


class TransportError(LpcorpError):
    exit_code = 4


class ProtocolError(TransportError):
    pass
