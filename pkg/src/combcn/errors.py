"""Exception types raised across the toolkit."""


class InpaintError(Exception):
    """Base class for all toolkit errors."""


class EmptyInput(InpaintError, ValueError):
    pass


class ShapeMismatch(InpaintError, ValueError):
    pass


class IndivisibleSize(InpaintError, ValueError):
    pass


class EmptyMask(InpaintError, ValueError):
    pass


class EmptyDataset(InpaintError, ValueError):
    pass


class TooFewFrames(InpaintError, ValueError):
    pass


class ChecksumError(InpaintError):
    """Checkpoint or sample file failed integrity validation."""


class VersionError(InpaintError):
    """File format version or model variant does not match the reader."""
