"""Error vocabulary shared by all layers.

Every error carries a stable machine-readable ``code`` so the HTTP service
and CLI can map failures 1:1 without string matching on messages.
"""

from __future__ import annotations


class ProvError(Exception):
    """Base class for all domain errors."""

    code = "Error"
    http_status = 400

    def __init__(self, message: str, detail: dict | None = None):
        super().__init__(message)
        self.message = message
        self.detail = detail or {}


# --- workflow model ---------------------------------------------------------

class MalformedSpec(ProvError):
    code = "MalformedSpec"


class CycleIntroduced(ProvError):
    code = "CycleIntroduced"
    http_status = 409


class UnknownNode(ProvError):
    code = "UnknownNode"
    http_status = 404


# --- kernel -----------------------------------------------------------------

class UnknownItem(ProvError):
    code = "UnknownItem"
    http_status = 404


class UnknownVersion(ProvError):
    code = "UnknownVersion"
    http_status = 404


class UnknownExecution(ProvError):
    code = "UnknownExecution"
    http_status = 404


class UnknownAgent(ProvError):
    code = "UnknownAgent"
    http_status = 409


class InvalidTransition(ProvError):
    code = "InvalidTransition"
    http_status = 409


class NotEligible(ProvError):
    code = "NotEligible"
    http_status = 409


class MissingInput(ProvError):
    code = "MissingInput"


class OutcomeMissing(ProvError):
    code = "OutcomeMissing"


class OutcomeUnexpected(ProvError):
    code = "OutcomeUnexpected"


# --- storage ----------------------------------------------------------------

class StorageError(ProvError):
    code = "StorageError"
    http_status = 500


class StorageUnavailable(StorageError):
    code = "StorageUnavailable"
    http_status = 503


class AlreadyExists(StorageError):
    code = "AlreadyExists"
    http_status = 409


class NotFound(StorageError):
    code = "NotFound"
    http_status = 404


class ImmutableCluster(StorageError):
    code = "ImmutableCluster"
    http_status = 409


# --- executor ---------------------------------------------------------------

class UnknownScript(ProvError):
    code = "UnknownScript"


class PayloadUnavailable(ProvError):
    code = "PayloadUnavailable"


# --- opm --------------------------------------------------------------------

class EmptyExecution(ProvError):
    code = "EmptyExecution"
    http_status = 409


class InvalidGraph(ProvError):
    code = "InvalidGraph"


class ParseError(ProvError):
    code = "ParseError"


class SchemaViolation(ProvError):
    code = "SchemaViolation"


# --- service ----------------------------------------------------------------

class BadRequest(ProvError):
    code = "BadRequest"


class ConfigError(ProvError):
    code = "ConfigError"
