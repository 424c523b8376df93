"""Exception hierarchy shared by all pipeline stages."""


class VlsDamageError(Exception):
    """Base class for all errors raised by this package."""


class EmptyCloud(VlsDamageError):
    pass


class InvalidRadius(VlsDamageError):
    pass


class InvalidSpacing(VlsDamageError):
    pass


class DegenerateGeometry(VlsDamageError):
    pass


class EmptyStableArea(VlsDamageError):
    pass


class InsufficientNeighbors(VlsDamageError):
    pass


class UnknownFeature(VlsDamageError):
    pass


class FeatureMismatch(VlsDamageError):
    pass


class EmptyInput(VlsDamageError):
    pass


class Degenerate(VlsDamageError):
    """k-means was asked to split samples that are all identical."""


class EmptyBuilding(VlsDamageError):
    pass


class EmptyClass(VlsDamageError):
    pass


class UnsupportedVersion(VlsDamageError):
    pass


class ParseError(VlsDamageError):
    pass


class InvalidDamageParams(VlsDamageError):
    pass


class InvalidOverlap(VlsDamageError):
    pass


class LengthMismatch(VlsDamageError):
    pass


class MissingArtifact(VlsDamageError):
    def __init__(self, path, stage=None):
        self.path = str(path)
        msg = f"missing artifact: {self.path}"
        if stage:
            msg += f" (produced by the '{stage}' stage)"
        super().__init__(msg)


class ConfigError(VlsDamageError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
