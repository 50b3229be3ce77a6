"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid model parameters, problem data or run configuration.

    ``violations`` holds one human-readable message per failed check.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericFailure(ArithmeticError):
    """A computation produced non-finite values or failed to converge."""

    def __init__(self, message, *, knot=None, component=None, residual=None):
        self.knot = knot
        self.component = component
        self.residual = residual
        parts = [message]
        if knot is not None:
            parts.append(f"knot {knot}")
        if component is not None:
            parts.append(f"component {component}")
        if residual is not None:
            parts.append(f"residual {residual:.3e}")
        super().__init__(", ".join(parts))


class DegenerateEigenvalueError(ArithmeticError):
    """Top eigenvalue is (numerically) repeated so the maximiser is not unique."""

    def __init__(self, eigengap, threshold):
        self.eigengap = eigengap
        self.threshold = threshold
        super().__init__(f"eigengap {eigengap:.3e} <= threshold {threshold:.3e}")
