"""
Exceptions raised by microvasc. Everything derives from ``MicrovascError`` so
that callers (and the command line entry point) can catch one type.
"""
from django.core import exceptions as django_exceptions


class MicrovascError(Exception):
    """Base class of all microvasc errors."""

    def context(self):
        """
        Returns a dictionary of machine readable details used by the error
        report of the command line interface.
        """
        return {}


class ImproperlyConfigured(MicrovascError,
        django_exceptions.ImproperlyConfigured):
    """A setting or parameter group violates its invariants."""


class ParseError(MicrovascError):

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = "line %d: %s" % (line_number, message)
        super().__init__(message)
        self.line_number = line_number

    def context(self):
        return {'line_number': self.line_number}


class InputNotFound(MicrovascError):

    def __init__(self, path):
        super().__init__("input not found: %s" % path)
        self.path = path

    def context(self):
        return {'path': self.path}


class TopologyError(MicrovascError):
    """Self loops, references to unknown nodes and similar graph defects."""


class SingularSystemError(TopologyError):
    """A 1D component carries no Dirichlet node."""

    def __init__(self, message, component=()):
        super().__init__(message)
        self.component = sorted(component)

    def context(self):
        return {'component': self.component[:20]}


class ValidationError(MicrovascError):
    """Geometric or physical data outside of its admissible range."""


class DomainError(MicrovascError, ValueError):
    """An argument lies outside the mathematical domain of a formula."""


class StateError(MicrovascError):
    """An operation was called before the state it needs was computed."""


class SolverError(MicrovascError):

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)

    def context(self):
        return {'residual_history': self.residual_history[-10:]}


class ConvergenceError(SolverError):

    def __init__(self, message, update_history=()):
        super().__init__(message, residual_history=update_history)
        self.update_history = list(update_history)

    def context(self):
        return {'update_history': self.update_history[-10:]}


class GrowthError(MicrovascError):
    """Wraps a solver failure with the growth phase and iteration it hit."""

    def __init__(self, message, phase, iteration, cause=None):
        super().__init__(
            "phase %s, iteration %d: %s" % (phase, iteration, message)
        )
        self.phase = phase
        self.iteration = iteration
        self.cause = cause

    def context(self):
        context = {'phase': self.phase, 'iteration': self.iteration}
        if self.cause is not None:
            context['cause'] = type(self.cause).__name__
            context.update(self.cause.context())
        return context
