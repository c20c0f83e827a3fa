"""Exception types shared across the codec."""


class FormatError(ValueError):
    """Malformed bytes: bad magic, bad version, inconsistent lengths."""


class TruncatedStreamError(FormatError):
    """A byte stream ended before all expected data was read."""


class DigestMismatchError(FormatError):
    """Content digest does not match: corrupt file or the wrong model."""


class MissingWeightsError(KeyError):
    """A network needs a parameter the weight set does not provide."""


class SynthesisMismatchError(RuntimeError):
    """Decoder-side synthesis differs from the encoder's recorded hash."""
