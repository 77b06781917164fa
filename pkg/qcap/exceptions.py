"""Exception hierarchy shared by every qcap module"""


class QcapError(Exception):
    """Base class for all qcap errors"""


class QcapValidationError(QcapError, ValueError):
    """Input violates a documented precondition or schema"""


class DimensionMismatch(QcapValidationError):
    pass


class UnknownGate(QcapValidationError):
    pass


class OverlappingGates(QcapValidationError):
    pass


class NotDefiniteOutcome(QcapValidationError):
    pass


class SchemaError(QcapValidationError):
    """A file failed validation; line is 1-based when known"""

    def __init__(self, message: str, line: int = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NumericalError(QcapError, ArithmeticError):
    """A computation could not produce a finite, meaningful result"""


class ConstantSeries(NumericalError):
    pass
