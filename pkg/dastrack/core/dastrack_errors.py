#!/usr/bin/env python3
# coding: utf-8
""" Exceptions raised by `dastrack`.

All messages carry the ``[Dastrack]`` prefix. The CLI maps input/config errors
to exit code 2 and invariant violations to exit code 3.
"""


class DastrackError(Exception):
    """ Base class for all `dastrack` errors. """


class FormatError(DastrackError, ValueError):
    """ Malformed file header or rows. """


class DataError(DastrackError, ValueError):
    """ Non-finite value in a data matrix, located by (row, col). """

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class ParseError(DastrackError, ValueError):
    """ Unparseable row in a delimited text file. """

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class ConfigError(DastrackError, ValueError):
    """ Invalid configuration value or unknown configuration key. """


class DomainError(DastrackError, ValueError):
    """ Input outside the domain of an operation. """


class NumericError(DastrackError, ArithmeticError):
    """ Numerical breakdown, e.g. a non-positive innovation variance. """


class HypothesisOverflow(DastrackError):
    """ Data-association enumeration exceeded its hypothesis cap. """


class TuningError(DastrackError):
    """ No grid point produced a usable pick set. """

    def __init__(self, message, surface=None):
        super().__init__(message)
        self.surface = surface if surface is not None else {}


class FitError(DastrackError):
    """ Class model could not be fitted. """

    def __init__(self, message, class_label=None):
        super().__init__(message)
        self.class_label = class_label


class InvariantError(DastrackError, AssertionError):
    """ Internal invariant violated. """
