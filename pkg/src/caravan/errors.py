"""Exception hierarchy shared by every Caravan component.

Each error carries a stable machine ``code`` that the gateway maps onto the
JSON error body, so raising the right class anywhere in the stack produces
the right API response.
"""

from __future__ import annotations


class CaravanError(Exception):
    """Base class; ``code`` is the stable machine-readable error code."""

    code = "error"
    http_status = 500

    def __init__(self, message: str = "", details: list | None = None):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details or []


class InvalidArgument(CaravanError):
    code = "invalid-argument"
    http_status = 400


class ValidationFailure(CaravanError):
    """One or more parameters failed validation; ``details`` lists every
    violation as ``(name, reason)`` pairs (all reported at once)."""

    code = "validation-error"
    http_status = 400

    def __init__(self, message: str = "", details: list | None = None):
        super().__init__(message or "validation failed", details)


class ParseError(CaravanError):
    code = "parse-error"
    http_status = 400


class NotFound(CaravanError):
    code = "not-found"
    http_status = 404


class Conflict(CaravanError):
    code = "conflict"
    http_status = 409


class MissingInput(CaravanError):
    code = "missing-input"
    http_status = 400


class IntegrityError(CaravanError):
    code = "integrity-error"


class StoreIOError(CaravanError):
    code = "io-error"


class LeaseLost(CaravanError):
    code = "lease-lost"
    http_status = 409


class EmptySelection(CaravanError):
    code = "empty-selection"
    http_status = 400


class IncompleteFeatures(CaravanError):
    code = "incomplete-features"
    http_status = 400

    def __init__(self, package_ids: list[str], message: str = ""):
        self.package_ids = sorted(package_ids)
        super().__init__(
            message or f"features incomplete for packages: {', '.join(self.package_ids)}",
            details=list(self.package_ids),
        )


class EmptyGroup(CaravanError):
    code = "empty-group"
    http_status = 400


class EmptyTarget(CaravanError):
    code = "empty-target"
    http_status = 400


class Unsupported(CaravanError):
    code = "unsupported"
    http_status = 400


class RetryableTaskError(CaravanError):
    """Raised by stage handlers for transient conditions; the worker fails
    the task with retryable=True so the orchestrator may requeue it."""

    code = "retryable"
