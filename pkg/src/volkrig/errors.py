"""Exception hierarchy shared across the reconstruction engine.

Every error class maps to a stable CLI exit code (see ``EXIT_CODES``),
so scripts can dispatch on failures without parsing messages.
"""


class VolkrigError(Exception):
    """Base class for all engine errors."""


# --- stack / ingest ---------------------------------------------------------

class EmptyStack(VolkrigError):
    pass


class DimensionMismatch(VolkrigError):
    pass


class NonPositiveSpacing(VolkrigError):
    pass


class ManifestParse(VolkrigError):
    pass


class ImageDecode(VolkrigError):
    pass


# --- volume persistence -----------------------------------------------------

class Io(VolkrigError):
    pass


class CorruptHeader(VolkrigError):
    pass


class ChecksumMismatch(VolkrigError):
    pass


class InvalidGrid(VolkrigError):
    pass


# --- kriging ----------------------------------------------------------------

class InsufficientSamples(VolkrigError):
    pass


class DegenerateLags(VolkrigError):
    pass


class SingularSystem(VolkrigError):
    pass


class NoKnownNeighbors(VolkrigError):
    pass


# --- shearlet ---------------------------------------------------------------

class ImageTooSmall(VolkrigError):
    pass


# --- block pipeline ---------------------------------------------------------

class TooFewSlices(VolkrigError):
    pass


class TilingGap(VolkrigError):
    pass


class TilingOverlap(VolkrigError):
    pass


# --- surfacing / slicing ----------------------------------------------------

class MissingData(VolkrigError):
    pass


class ZeroDirection(VolkrigError):
    pass


class EmptyIntersection(VolkrigError):
    pass


class EmptyRegion(VolkrigError):
    pass


class UpscaleRequested(VolkrigError):
    pass


# --- metrics ----------------------------------------------------------------

class AlignmentMismatch(VolkrigError):
    pass


# Stable exit-code table for the CLI. 1 is reserved for unexpected crashes,
# 2 for argument errors (argparse default).
EXIT_CODES = {
    ManifestParse: 3,
    ImageDecode: 4,
    DimensionMismatch: 5,
    EmptyStack: 5,
    NonPositiveSpacing: 5,
    Io: 6,
    CorruptHeader: 6,
    ChecksumMismatch: 6,
    InvalidGrid: 6,
    SingularSystem: 7,
    NoKnownNeighbors: 7,
    InsufficientSamples: 7,
    DegenerateLags: 7,
    ImageTooSmall: 8,
    TooFewSlices: 8,
    TilingGap: 9,
    TilingOverlap: 9,
    MissingData: 10,
    ZeroDirection: 10,
    EmptyIntersection: 10,
    EmptyRegion: 10,
    UpscaleRequested: 10,
    AlignmentMismatch: 11,
}


def exit_code_for(exc: BaseException) -> int:
    for klass, code in EXIT_CODES.items():
        if isinstance(exc, klass):
            return code
    return 1
