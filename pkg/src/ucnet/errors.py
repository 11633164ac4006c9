"""Exception hierarchy. Each class carries the process exit code the CLI maps it to."""


class UcnetError(Exception):
    exit_code = 1
    code = "UCNET_ERROR"


class ConfigError(UcnetError, ValueError):
    exit_code = 3
    code = "CONFIG_ERROR"


class ImageFormatError(UcnetError, ValueError):
    exit_code = 4
    code = "IMAGE_FORMAT"


class JpegError(UcnetError, ValueError):
    """Baseline JPEG parse failure; ``code`` names the failure kind."""

    exit_code = 5
    code = "JPEG_ERROR"

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class ProgressiveUnsupported(JpegError):
    def __init__(self, message="progressive JPEG (SOF2) is not supported"):
        super().__init__("PROGRESSIVE_UNSUPPORTED", message)


class ArithmeticUnsupported(JpegError):
    def __init__(self, message="arithmetic-coded JPEG is not supported"):
        super().__init__("ARITHMETIC_UNSUPPORTED", message)


class TruncatedStream(JpegError):
    def __init__(self, message="unexpected end of JPEG data"):
        super().__init__("TRUNCATED_STREAM", message)


class BadMarker(JpegError):
    def __init__(self, message="invalid or unsupported marker"):
        super().__init__("BAD_MARKER", message)


class ManifestError(UcnetError):
    exit_code = 6
    code = "MANIFEST_ERROR"


class CheckpointError(UcnetError):
    exit_code = 7
    code = "CHECKPOINT_ERROR"


class DigestMismatch(CheckpointError):
    code = "DIGEST_MISMATCH"


class ConfigMismatch(CheckpointError):
    exit_code = 8
    code = "CONFIG_MISMATCH"

    def __init__(self, field: str, expected, found):
        self.field = field
        super().__init__(f"config field {field!r}: expected {expected!r}, found {found!r}")
