"""Exception types shared across the package."""


class BlurIGError(Exception):
    """Base class for all package errors."""


class ParameterError(BlurIGError, ValueError):
    """An argument is outside its allowed domain (bad sigma, too few steps, ...)."""


class ValidationError(BlurIGError, ValueError):
    """Inputs are individually valid but inconsistent with each other (shapes, indices)."""


class ModelFormatError(BlurIGError):
    """A model weights file could not be parsed."""


class InputFormatError(BlurIGError):
    """An image, grid or dataset file could not be read."""
