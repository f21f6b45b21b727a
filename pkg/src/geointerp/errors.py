"""Exception hierarchy. Every library error derives from GeoInterpError so the
CLI can report a single machine-parsable class name."""


class GeoInterpError(Exception):
    pass


class CutLocusError(GeoInterpError, ValueError):
    """Exp/Log requested at or beyond the cut locus."""


class DegenerateEmbeddingError(GeoInterpError, ValueError):
    pass


class RetractionError(GeoInterpError, ValueError):
    pass


class ParseError(GeoInterpError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RangeError(GeoInterpError, ValueError):
    pass


class ConfigError(GeoInterpError, ValueError):
    pass


class SizeError(GeoInterpError, ValueError):
    pass


class DegeneracyError(GeoInterpError, ValueError):
    """Estimator inputs contain coincident points (zero neighbour distance)."""
