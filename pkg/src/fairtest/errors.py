"""Exception hierarchy shared by every fairtest module."""


class FairTestError(Exception):
    """Base class for all errors raised by fairtest."""


class InputShapeError(FairTestError, ValueError):
    pass


class NumericOverflowError(FairTestError, ArithmeticError):
    pass


class LabelError(FairTestError, ValueError):
    pass


class DataError(FairTestError, ValueError):
    pass


class ModelParseError(FairTestError):
    """Malformed model file. ``offset`` is the byte position of the failure."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ModelValidationError(FairTestError, ValueError):
    """Structurally valid model file whose dimensions or values do not agree."""

    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class ContainerFormatError(FairTestError):
    pass


class MissingPairError(FairTestError, KeyError):
    pass


class AttributeTagError(FairTestError, ValueError):
    pass


class EmptyPairingError(FairTestError, ValueError):
    pass


class ConstructionError(FairTestError, ValueError):
    pass


class DegeneratePartitionError(FairTestError, ValueError):
    pass


class UndefinedStatisticError(FairTestError, ValueError):
    pass


class ParameterError(FairTestError, ValueError):
    pass


class ConfigurationError(FairTestError, ValueError):
    pass


class SelectionError(FairTestError, ValueError):
    pass


class MutationError(FairTestError, ValueError):
    pass
