"""Exception types shared across the package."""


class EvaluationError(RuntimeError):
    """A model callback returned a non-finite value; carries (field, t, x)."""

    def __init__(self, field, t, x):
        self.field = field
        self.t = t
        self.x = x
        super().__init__(f"non-finite value from {field} at t={t}, x={x}")


class DegenerateMatrixError(ValueError):
    """A matrix required to have full row rank is numerically rank deficient."""

    def __init__(self, lambda_min, lambda_max, rank_tol):
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max
        self.rank_tol = rank_tol
        super().__init__(
            f"rank-deficient matrix: smallest singular value {lambda_min:.3e} "
            f"<= {rank_tol:.1e} * largest ({lambda_max:.3e})")


class BlowUpError(RuntimeError):
    """SDE state became non-finite; carries the first bad grid index."""

    def __init__(self, grid_index):
        self.grid_index = grid_index
        super().__init__(f"non-finite SDE state first reached at grid index {grid_index}")


class FlowAccuracyError(RuntimeError):
    """Inverse-flow identity Z_t Y_t = Id violated beyond flow_tol."""

    def __init__(self, max_defect, flow_tol):
        self.max_defect = max_defect
        self.flow_tol = flow_tol
        super().__init__(
            f"flow inverse defect {max_defect:.3e} exceeds tolerance {flow_tol:.1e}; "
            "increase steps_per_sub")


class CapabilityError(RuntimeError):
    """A derivative or feature required by the operation is unavailable."""


class DomainError(ValueError):
    """Input lies outside the guaranteed domain of the operation."""


class ConvergenceError(RuntimeError):
    """An iteration failed to converge (contraction lost or budget exhausted)."""


class DecompositionError(RuntimeError):
    """Key-decomposition residual far outside its fitted tolerance; usually a
    coefficient-convention mismatch."""

    def __init__(self, residual, tolerance):
        self.residual = residual
        self.tolerance = tolerance
        super().__init__(
            f"decomposition residual {residual:.3e} exceeds 10 x fitted "
            f"tolerance {tolerance:.3e}; check the V-term coefficient convention")


class DataQualityError(RuntimeError):
    """Monte Carlo output fails a basic sanity threshold (e.g. blow-up rate)."""


class ConfigError(ValueError):
    """Config parsing/validation failure with a field- or line-precise message."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field '{field}'")
        prefix = ", ".join(loc)
        super().__init__(f"{prefix}: {message}" if prefix else message)
