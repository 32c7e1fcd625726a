class ConfigError(ValueError):
    """Invalid run configuration. ``field`` is the dotted path of the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NumericalAbort(RuntimeError):
    """A sampler produced non-finite values.

    ``iteration`` is the outer Gibbs iteration (None outside the driver) and
    ``substep`` the inner discretization step where it happened.
    """

    def __init__(self, message: str, *, substep: int | None = None, iteration: int | None = None):
        self.substep = substep
        self.iteration = iteration
        where = []
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if substep is not None:
            where.append(f"substep {substep}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.base_message = message

    def at_iteration(self, iteration: int) -> "NumericalAbort":
        return NumericalAbort(self.base_message, substep=self.substep, iteration=iteration)
