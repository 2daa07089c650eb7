"""Exception hierarchy shared across the toolkit."""


class SL3DError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SL3DError):
    """Bad configuration: unknown key, unparsable value, invalid combination."""


class DataError(SL3DError):
    """Bad input data (files, clouds, labels)."""


class ParseError(DataError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class UnsupportedFormat(DataError):
    pass


class EmptyCloud(DataError):
    pass


class DegenerateCloud(DataError):
    pass


class TooFewPoints(DataError):
    pass


class MissingNormals(DataError):
    pass


class ZeroSceneVolume(DataError):
    pass


class NoRegions(DataError):
    pass


class ShapeMismatch(SL3DError):
    pass


class InvalidTarget(SL3DError):
    pass


class NonFiniteGradient(SL3DError):
    pass


class NonFiniteLogits(SL3DError):
    pass


class DatasetTooSmall(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyTrainSet(DataError):
    pass


class SceneMismatch(DataError):
    pass


class OverlapError(DataError):
    pass


class InternalInvariantError(SL3DError):
    """A condition the implementation guarantees was violated; indicates a bug."""
