"""Common exception base for the fedforge package.

Every fedforge-specific failure derives from :class:`FedforgeError` so the
CLI can map "anything went wrong inside the framework" to one exit code.
Concrete error classes live next to the code that raises them.
"""


class FedforgeError(Exception):
    """Base class for all errors raised by fedforge."""
