"""
HammerLab - Error Handling Module
"""

from .framework import (
    ConfigurationError,
    ErrorHandler,
    FactoringBudgetExceeded,
    HammerLabError,
    InvalidDomainError,
    InvalidInputError,
    MalformedRecordError,
    OrderingError,
    PolicyMisuseError,
    TimingSourceError,
    UnknownFunctionError,
    UsageError,
    safe_execute,
    setup_logging,
)

__all__ = [
    'ConfigurationError',
    'ErrorHandler',
    'FactoringBudgetExceeded',
    'HammerLabError',
    'InvalidDomainError',
    'InvalidInputError',
    'MalformedRecordError',
    'OrderingError',
    'PolicyMisuseError',
    'TimingSourceError',
    'UnknownFunctionError',
    'UsageError',
    'safe_execute',
    'setup_logging',
]
