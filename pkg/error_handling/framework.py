"""
HammerLab - Error Handling Framework
Exception hierarchy, structured error documents and logging setup.
"""

import os
import json
import logging
import traceback
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Dict, Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

logger = logging.getLogger("HAMMERLAB.ErrorHandler")


@dataclass(eq=False)
class HammerLabError(Exception):
    """Base error for every domain failure raised by the toolkit."""
    message: str
    error_type: str = "hammerlab_error"
    context: Dict[str, Any] = field(default_factory=dict)

    def __str__(self) -> str:
        return self.message


@dataclass(eq=False)
class InvalidInputError(HammerLabError):
    """An argument lies outside the domain of an operation."""
    error_type: str = "invalid_input"


@dataclass(eq=False)
class OrderingError(HammerLabError):
    """A timestamp went backwards."""
    error_type: str = "ordering_error"


@dataclass(eq=False)
class ConfigurationError(HammerLabError):
    """Configuration could not be parsed or failed validation."""
    error_type: str = "configuration_error"
    key: Optional[str] = None
    line: Optional[int] = None


@dataclass(eq=False)
class PolicyMisuseError(HammerLabError):
    """An adaptive-only operation was applied to another page policy."""
    error_type: str = "policy_misuse"


@dataclass(eq=False)
class UnknownFunctionError(HammerLabError):
    """A packet profile does not contain the requested function label."""
    error_type: str = "unknown_function"


@dataclass(eq=False)
class TimingSourceError(HammerLabError):
    """A timing source failed to deliver a measurement."""
    error_type: str = "timing_source_error"


@dataclass(eq=False)
class MalformedRecordError(HammerLabError):
    """An input record (OCSP index line, zone line, key line) is malformed."""
    error_type: str = "malformed_record"
    line: Optional[int] = None


@dataclass(eq=False)
class InvalidDomainError(HammerLabError):
    """A domain name does not follow the letters-digits-hyphen rules."""
    error_type: str = "invalid_domain"


@dataclass(eq=False)
class FactoringBudgetExceeded(HammerLabError):
    """Factoring gave up before the modulus was fully factored."""
    error_type: str = "factoring_budget_exceeded"


@dataclass(eq=False)
class UsageError(HammerLabError):
    """Command-line usage error."""
    error_type: str = "usage_error"


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Configure the root logger with the toolkit format."""
    handlers: list = [logging.StreamHandler()]
    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


class ErrorHandler:
    """
    Central error handling for the toolkit.

    Maps exceptions to exit codes and hints, and documents them as
    structured dictionaries that the CLI prints to stderr.
    """

    EXIT_CODES = {
        "usage_error": 2,
        "configuration_error": 3,
        "invalid_input": 4,
        "ordering_error": 4,
        "policy_misuse": 4,
        "unknown_function": 4,
        "malformed_record": 4,
        "invalid_domain": 4,
        "timing_source_error": 5,
        "factoring_budget_exceeded": 5,
    }

    def __init__(self, error_docs_dir: Optional[str] = None):
        self.error_docs_dir = error_docs_dir
        self.logger = logger
        self.hints: Dict[str, Callable[[HammerLabError], str]] = {}
        self.setup_hints()

    def setup_hints(self) -> None:
        """Registers the hint generators per error type."""
        self.hints = {
            "configuration_error": self.hint_configuration,
            "usage_error": lambda error: "run with --help to list subcommands and flags",
            "malformed_record": self.hint_malformed_record,
            "timing_source_error": lambda error: "check the timing source; measurements were retried",
        }

    def hint_configuration(self, error: HammerLabError) -> str:
        key = getattr(error, "key", None)
        line = getattr(error, "line", None)
        if key:
            return f"fix or remove the key '{key}' (see docs/configuration.md)"
        if line:
            return f"the configuration file does not parse near line {line}"
        return "see docs/configuration.md for the accepted keys"

    def hint_malformed_record(self, error: HammerLabError) -> str:
        line = getattr(error, "line", None)
        return f"input line {line} does not follow the documented grammar" if line else "input does not follow the documented grammar"

    def exit_code_for(self, error: BaseException) -> int:
        if isinstance(error, HammerLabError):
            return self.EXIT_CODES.get(error.error_type, 1)
        return 1

    def handle_error(self, error: BaseException, context: str = "") -> Dict[str, Any]:
        """Builds the structured error document for an exception."""
        if isinstance(error, HammerLabError):
            error_type = error.error_type
            details = dict(error.context)
            for extra in ("key", "line"):
                value = getattr(error, extra, None)
                if value is not None:
                    details[extra] = value
            hint_fn = self.hints.get(error_type)
            hint = hint_fn(error) if hint_fn else None
            self.logger.error(f"{error_type}: {error.message}")
        else:
            error_type = "internal_error"
            details = {"exception": type(error).__name__}
            hint = None
            self.logger.exception(f"Unexpected failure: {error}")

        error_doc = {
            "error_type": error_type,
            "message": str(error),
            "details": details,
            "context": context,
            "exit_code": self.exit_code_for(error),
            "hint": hint,
            "stack_trace": "".join(traceback.format_exception(type(error), error, error.__traceback__)),
        }
        if self.error_docs_dir:
            self.save_error_documentation(error_doc)
        return error_doc

    def save_error_documentation(self, error_doc: Dict[str, Any]) -> Optional[str]:
        """Saves an error document as JSON under the configured directory."""
        try:
            os.makedirs(self.error_docs_dir, exist_ok=True)
            filename = f"error_{datetime.now().strftime('%Y%m%d_%H%M%S_%f')}.json"
            filepath = os.path.join(self.error_docs_dir, filename)
            with open(filepath, "w", encoding="utf-8") as f:
                json.dump({**error_doc, "timestamp": datetime.now().isoformat()}, f, indent=2)
            self.logger.info(f"Error documentation saved: {filepath}")
            return filepath
        except OSError as e:
            self.logger.error(f"Failed to save error documentation: {e}")
            return None


def safe_execute(func: Callable, *args, error_handler: Optional[ErrorHandler] = None, **kwargs) -> Dict[str, Any]:
    """
    Safe execution wrapper with error handling.

    Args:
        func: Function to execute
        *args: Positional arguments
        error_handler: Handler used to document failures
        **kwargs: Keyword arguments

    Returns:
        Dict containing execution result or error document
    """
    handler = error_handler or ErrorHandler()
    try:
        return {"success": True, "result": func(*args, **kwargs)}
    except Exception as e:
        return {"success": False, "error_doc": handler.handle_error(e, context=getattr(func, "__name__", "call"))}
