"""Shared exception types."""


class InvalidArgumentError(ValueError):
    """Raised when an operation receives arguments outside its contract."""


class BridgeError(RuntimeError):
    """Raised on bridge handshake/protocol/transport failures.

    Carries the offending raw response (when one exists) in ``payload``.
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload
