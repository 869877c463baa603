"""Exception types shared across the package."""


class FedCpdpError(Exception):
    """Base class for all package errors."""


class MissingColumn(FedCpdpError):
    pass


class NonNumericCell(FedCpdpError):
    def __init__(self, path, row, column, value):
        self.path = path
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"{path}: non-numeric value {value!r} at row {row}, column {column!r}")


class EmptyFile(FedCpdpError):
    pass


class SingleClassDataset(FedCpdpError):
    pass


class DimensionMismatch(FedCpdpError):
    pass


class ZeroVector(FedCpdpError):
    pass


class LengthMismatch(FedCpdpError):
    pass


class SingleClass(FedCpdpError):
    pass


class AllZeroDifferences(FedCpdpError):
    pass


class EmptyInput(FedCpdpError):
    pass


class UnknownProject(FedCpdpError):
    pass


class TestEqualsDistillation(FedCpdpError):
    pass


class RepeatMismatch(FedCpdpError):
    pass
