"""Error types and centralized error handling for the GRP urn toolkit."""

import json
import logging
import sys
from typing import Any, Dict, List, Optional, TextIO

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BAD_FIT = 3
EXIT_NUMERICAL = 4


class GrpUrnError(Exception):
    """Base exception for every toolkit failure."""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        """Structured form written to the diagnostic stream."""
        return {
            'error': type(self).__name__,
            'message': self.message,
            'details': self.details,
        }


class UsageError(GrpUrnError):
    """Bad input supplied by the caller: parameters, files, variant names."""

    exit_code = EXIT_USAGE


class NumericalError(GrpUrnError):
    """A computation could not produce a trustworthy value."""

    exit_code = EXIT_NUMERICAL


# urn and schedules

class InvalidParams(UsageError):
    """Urn configuration violates b0_i + B0_i > 0 or |b0| > 0."""


class OutOfRange(UsageError):
    """Schedule constructor parameter outside its admissible range."""


class UnknownVariant(UsageError):
    """Schedule variant name not recognized."""


class Degenerate(UsageError):
    """Schedule produces beta_n < 0 at some early index."""


class PositivityFailure(UsageError):
    """Schedule produces a non-positive alpha for the chosen index offset."""


class ScheduleDomain(NumericalError):
    """Schedule evaluated to a non-finite value or a non-positive alpha."""


class NumericalDrift(NumericalError):
    """Predictive mean drifted away from the simplex before renormalization."""


# Monte Carlo harness

class MinimumHorizon(UsageError):
    """A horizon below one extraction was requested."""


class ResourceLimit(UsageError):
    """Requested horizons times replicas exceed the configured step budget."""


class WrongRegime(UsageError):
    """Report requested for summaries produced under another schedule family."""


# special functions

class DomainError(NumericalError):
    """Special function called outside its domain."""


class ConvergenceError(NumericalError):
    """Series or continued fraction exceeded its iteration cap."""


class EmptySample(UsageError):
    """Statistical test called with no observations."""


# goodness of fit

class ZeroProbability(NumericalError):
    """A reference probability is zero where a division by it is required."""


class DegenerateClusters(NumericalError):
    """All cluster sizes equal, so eta and lambda are not separately identifiable."""


class ZeroVariance(NumericalError):
    """Series has zero sample variance."""


# input files

class ParseError(UsageError):
    """Malformed contingency file."""


class EmptyFile(UsageError):
    """Contingency file without data rows."""


class AcceptanceMiss(NumericalError):
    """A reproduced reference value is outside its tolerance."""


class ErrorHandler:
    """Records handled errors and maps them to process exit codes."""

    def __init__(self, stream: Optional[TextIO] = None):
        self.stream = stream
        self.error_log: List[Dict[str, Any]] = []

    def exit_code_for(self, error: BaseException) -> int:
        if isinstance(error, GrpUrnError):
            return error.exit_code
        if isinstance(error, (ValueError, TypeError, FileNotFoundError)):
            return EXIT_USAGE
        return EXIT_NUMERICAL

    def handle(self, error: BaseException) -> int:
        """Log the error, emit it as JSON on the diagnostic stream, return its exit code."""
        if isinstance(error, GrpUrnError):
            payload = error.to_dict()
        else:
            payload = {'error': type(error).__name__, 'message': str(error), 'details': {}}
        code = self.exit_code_for(error)
        payload['exit_code'] = code
        self.error_log.append(payload)

        if code == EXIT_USAGE:
            logger.warning(f"{payload['error']}: {payload['message']}")
        else:
            logger.error(f"{payload['error']}: {payload['message']}")

        stream = self.stream or sys.stderr
        stream.write(json.dumps(payload, default=_json_default, sort_keys=True) + '\n')
        stream.flush()
        return code

    def get_error_summary(self) -> Dict[str, Any]:
        """Get summary of all errors encountered."""
        summary: Dict[str, Any] = {
            'total_errors': len(self.error_log),
            'errors_by_type': {},
            'worst_exit_code': max((e['exit_code'] for e in self.error_log), default=EXIT_OK),
        }
        for entry in self.error_log:
            kind = entry.get('error', 'unknown')
            summary['errors_by_type'][kind] = summary['errors_by_type'].get(kind, 0) + 1
        return summary


def _json_default(value: Any) -> Any:
    # numpy scalars and arrays end up in details
    if hasattr(value, 'tolist'):
        return value.tolist()
    return str(value)
