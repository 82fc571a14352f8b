"""Platform error types.

Errors carry a stable machine-readable code so the gateway and CLI can
surface them without string matching.
"""

from __future__ import annotations


class DataboxError(Exception):
    code = "ERROR"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class NotFoundError(DataboxError):
    code = "NOT-FOUND"


class DuplicateError(DataboxError):
    code = "DUPLICATE"


class SchemaMismatchError(DataboxError):
    code = "SCHEMA-MISMATCH"


class AuthorizationError(DataboxError):
    code = "NOT-AUTHORIZED"


class TokenDeniedError(DataboxError):
    """A store request refused by the arbiter; reason is the denial enum."""

    code = "TOKEN-DENIED"

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or f"token denied: {reason}")
        self.reason = reason


class ValidationError(DataboxError):
    """Carries the full list of machine-readable violation codes."""

    code = "INVALID"

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations) or "invalid")
        self.violations = list(violations)
