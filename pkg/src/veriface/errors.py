"""Exception hierarchy shared by all veriface modules."""


class VerifaceError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(VerifaceError):
    """Invalid configuration value or unknown configuration key."""


class ImageFormatError(VerifaceError):
    """Unreadable or unsupported image file."""


class AlignmentError(VerifaceError):
    """Eye annotations unusable for alignment (outside image, coincident)."""


class ManifestError(VerifaceError):
    """Malformed dataset manifest or protocol-role violation."""


class EmptyMaskError(VerifaceError):
    """A feature was requested over a mask that selects no pixels."""


class ModelFormatError(VerifaceError):
    """Model file is corrupt or dimensionally inconsistent."""


class UnknownClientError(VerifaceError):
    """A claim names a client that is not enrolled in the model."""


class DegenerateClientError(VerifaceError):
    """Client and imposter projected means coincide; no usable template."""

    def __init__(self, client_id, message=None):
        self.client_id = client_id
        super().__init__(message or f"client {client_id!r} is untrainable: "
                         "projected client and imposter means coincide")


class SingularScatterError(VerifaceError):
    """Within-class scatter is singular even after regularization."""

    def __init__(self, message, diagnosis=None):
        self.diagnosis = diagnosis
        super().__init__(message)
