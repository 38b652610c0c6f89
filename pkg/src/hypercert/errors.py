"""Exception hierarchy shared across the toolkit."""


class HypercertError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(HypercertError):
    """Malformed input file or expression text."""


class FormulaSyntaxError(ParseError):
    """Syntax error in a formula, with a position."""

    def __init__(self, message, position=None):
        super().__init__(message if position is None else f"{message} (at position {position})")
        self.position = position


class FreeVariableError(ParseError):
    """A trace variable occurs without being quantified."""


class ValidationError(HypercertError):
    """Input parsed but violates a structural invariant."""


class DomainError(HypercertError):
    """A state point lies outside the declared state space."""


class SpecError(HypercertError):
    """The system lacks a declaration required by the requested conditions."""


class FragmentError(HypercertError):
    """Formula is outside the fragment required by the requested conditions."""


class ArityError(HypercertError):
    """Evaluation point does not match the variable count."""


class CapacityError(HypercertError):
    """A configured size or instance budget was exceeded."""


class ConfigError(HypercertError):
    """Invalid sampling or synthesis configuration."""


class SolverError(HypercertError):
    """External solver failed or produced unparseable output."""


class NumericalError(HypercertError):
    """The LP backend reported an ill-conditioned or failed solve."""
