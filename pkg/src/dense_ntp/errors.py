"""Exception types shared across modules."""


class DenseNTPError(Exception):
    """Base class for domain errors (the CLI maps these to exit code 1)."""


class GridMismatch(DenseNTPError, ValueError):
    pass


class NoValidPixels(DenseNTPError, ValueError):
    pass
