"""Shared exception types.

DataError covers malformed or unusable pipeline inputs and maps to CLI
exit code 2; everything unexpected maps to 3.
"""


class DataError(Exception):
    """Input data is missing, malformed, or unusable."""


class BookRejected(DataError):
    """A book failed ingestion; the message carries the reason."""
