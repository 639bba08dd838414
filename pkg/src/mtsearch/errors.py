"""Error taxonomy shared by every module and mapped to CLI exit codes."""

from __future__ import annotations


class SearchError(Exception):
    """Base class; ``category`` and ``exit_code`` drive the CLI error record."""

    category = "error"
    exit_code = 1


class SchemaError(SearchError):
    category = "schema"
    exit_code = 2


class DomainError(SearchError, ValueError):
    category = "domain"
    exit_code = 3


class ConfigurationError(DomainError):
    """Invalid channel or experiment parameter."""

    category = "configuration"


class ResourceError(SearchError):
    category = "resource"
    exit_code = 4


class NumericalError(SearchError, ArithmeticError):
    category = "numerical"
    exit_code = 5
