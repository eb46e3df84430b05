"""Exception types shared across the package."""


class OutlineForgeError(Exception):
    """Base class for every error raised by this package."""


class MalformedJson(OutlineForgeError):
    """Annotation file is not valid JSON or violates the dataset schema."""


class DanglingReference(OutlineForgeError):
    """An annotation points at an image or category id that does not exist."""

    def __init__(self, annotation_id: int, missing_id: int, kind: str = "image"):
        self.annotation_id = annotation_id
        self.missing_id = missing_id
        self.kind = kind
        super().__init__(
            f"annotation {annotation_id} references missing {kind} id {missing_id}"
        )


class DimensionMismatch(OutlineForgeError):
    """Two rasters (or a raster and its declared size) disagree on dimensions."""


class RleLengthMismatch(OutlineForgeError):
    """RLE counts do not sum to width*height."""


class DegeneratePolygon(OutlineForgeError):
    """Polygon has fewer than 3 vertices."""


class EmptyClassName(OutlineForgeError):
    """Prompt construction received an empty class name."""


class BackendUnreachable(OutlineForgeError):
    """Inpainting service could not be reached after all retry attempts."""


class BackendRejected(OutlineForgeError):
    """Inpainting service answered with an error status."""

    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message
        super().__init__(f"backend rejected request (status {status}): {message}")


class ProtocolViolation(OutlineForgeError):
    """Service response does not conform to the wire protocol."""


class NotDivisible(OutlineForgeError):
    """Category count is not divisible by the number of folds."""


class InsufficientImages(OutlineForgeError):
    """A class has fewer eligible images than the requested shot count."""

    def __init__(self, class_id: int, available: int, required: int):
        self.class_id = class_id
        self.available = available
        self.required = required
        super().__init__(
            f"class {class_id} has {available} eligible images, {required} required"
        )


class SkippedVanished(OutlineForgeError):
    """Erosion left no usable guidance mask for this instance."""


class SkippedTooSmall(OutlineForgeError):
    """No annotation of the requested class passes the minimum-area filter."""


class FailureBudgetExceeded(OutlineForgeError):
    """Backend failures during a batch run exceeded the configured budget."""


class TooFewSamples(OutlineForgeError):
    """Statistics need at least two feature vectors."""


class NumericalBreakdown(OutlineForgeError):
    """Covariance input is not positive semi-definite beyond tolerance."""


class EmptyInput(OutlineForgeError):
    """An aggregate was requested over an empty collection."""


class NotNormalized(OutlineForgeError):
    """Embedding vector is not unit length within tolerance."""


class EmptyBbox(OutlineForgeError):
    """Bounding box is empty after scaling and clamping."""


class MalformedFeatureFile(OutlineForgeError):
    """Feature container has a bad header or truncated payload."""
