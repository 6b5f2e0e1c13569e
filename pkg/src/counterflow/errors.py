"""Exception hierarchy shared across the package."""


class CounterflowError(Exception):
    """Base class for all package errors."""


class ShapeError(CounterflowError):
    """Tensor shape violates a contract (wrong rank, mismatched operands)."""


class ParameterError(CounterflowError):
    """Scalar argument outside its allowed range."""


class ConditionError(CounterflowError):
    """Unknown condition id, or a condition used in the wrong slot."""


class ConfigError(CounterflowError):
    """Malformed configuration or scene file."""


class SamplingError(CounterflowError):
    """Sampling aborted; carries the step index where it happened."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class AlignmentUndefined(CounterflowError):
    """Pearson correlation undefined because one series is constant."""


# --- wire protocol -------------------------------------------------------
#
# Client-side decode failures map one-to-one onto the protocol error codes
# documented in docs/protocol.md.


class WireError(CounterflowError):
    """Base class for protocol and transport failures."""

    code = 0


class BadMagic(WireError):
    code = 1


class TruncatedFrame(WireError):
    code = 2


class UnknownMessageType(WireError):
    code = 3


class LengthMismatch(WireError):
    code = 4


class ProtocolError(WireError):
    """Contract violation above the byte level (id mismatch, bad handshake)."""

    code = 5


class TransportError(WireError):
    """Connection failure or timeout while talking to a remote backend."""

    code = 6


class ServerError(WireError):
    """Error reported by the server in a type-3 message."""

    code = 7

    def __init__(self, server_code: int, message: str):
        super().__init__(f"server error {server_code}: {message}")
        self.server_code = server_code
        self.server_message = message
