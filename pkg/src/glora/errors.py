"""Exception hierarchy shared by all glora modules."""


class GloraError(Exception):
    """Base class for every error raised by glora."""


class NonFiniteInput(GloraError, ValueError):
    pass


class DimensionMismatch(GloraError, ValueError):
    pass


class NotSymmetric(GloraError, ValueError):
    pass


class ZeroMatrix(GloraError, ValueError):
    """All columns fell below the rank tolerance.

    The k = 0 factorization is attached as ``result`` so callers may decide
    what to do with it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ZeroUpdate(GloraError, ValueError):
    pass


class SingularGauge(GloraError, ValueError):
    pass


class EmptyRound(GloraError, ValueError):
    pass


class HeterogeneousRanks(GloraError, ValueError):
    pass


class InvalidConfig(GloraError, ValueError):
    pass


class Divergence(GloraError, ArithmeticError):
    pass


class ParseError(GloraError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ValidationError(GloraError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class CorruptCheckpoint(GloraError, ValueError):
    pass


class VersionMismatch(CorruptCheckpoint):
    pass
