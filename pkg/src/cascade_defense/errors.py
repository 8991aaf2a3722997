"""Exception types raised across the package."""


class CascadeDefenseError(Exception):
    pass


class InvalidParams(CascadeDefenseError, ValueError):
    pass


class UnconnectableParams(CascadeDefenseError):
    pass


class ParseError(CascadeDefenseError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SelfLoopError(ParseError):
    pass


class PowerIterationDiverged(CascadeDefenseError, ArithmeticError):
    pass


class BudgetExceeded(CascadeDefenseError):
    def __init__(self, required, allowed, what="payoff matrix entries"):
        self.required = required
        self.allowed = allowed
        super().__init__(f"{what}: required {required}, allowed {allowed}")


class SolverFailure(CascadeDefenseError, ArithmeticError):
    pass


class DimensionMismatch(CascadeDefenseError, ValueError):
    pass


class NoValidDefense(CascadeDefenseError):
    pass


class NonFiniteLoss(CascadeDefenseError, FloatingPointError):
    pass


class ConfigError(CascadeDefenseError, ValueError):
    pass
