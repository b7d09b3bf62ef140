"""Error kinds for the extraction tool.

JobError covers configuration and input-description problems (bad CSV,
bad flags, invalid job parameters); VideoDecodeError covers unreadable
or malformed video sources; EncoderError covers encoder lookup and
encoder output problems. The CLI maps JobError to exit 2 and the other
two to exit 3.
"""


class ExtractError(Exception):
    """Base class for everything this package raises on purpose."""


class JobError(ExtractError):
    """The job description (CSV, templates, flags) is invalid."""


class VideoDecodeError(ExtractError):
    """A video source could not be decoded into a frame array."""


class EncoderError(ExtractError):
    """Encoder lookup failed or an encoder produced invalid output."""
