class MTGCDError(Exception):
    pass


class GenerationError(MTGCDError):
    """A sampled building cannot be placed; callers resample."""


class LabelError(MTGCDError):
    pass


class EncodingError(MTGCDError):
    pass


class ConfigError(MTGCDError):
    pass


class NumericalError(MTGCDError):
    pass


class MetricError(MTGCDError):
    pass


class DegenerateBatch(UserWarning):
    """A loss saw no supervised pixels and returned zero."""
