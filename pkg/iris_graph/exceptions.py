
class IrisGraphException(Exception):
    pass


class ImageFormatException(IrisGraphException):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DimensionMismatchException(IrisGraphException):
    pass


class EmptyMaskException(IrisGraphException):
    pass


class ConfigurationException(IrisGraphException):
    pass


class UnusableGraphException(IrisGraphException):
    pass


class NodeCapExceededException(IrisGraphException):
    pass


class InsufficientDataException(IrisGraphException):
    pass


class DatasetFormatException(IrisGraphException):
    pass


class CheckpointFormatException(IrisGraphException):
    pass


class ShapeMismatchException(IrisGraphException):
    pass


class InvariantViolationException(IrisGraphException):
    pass


class TrainingDivergedException(IrisGraphException):
    pass
