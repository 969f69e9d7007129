"""Exception types shared across the package."""


class InputError(ValueError):
    """Argument outside its documented domain."""


class ShapeError(InputError):
    """Array dimensions do not match what the callee expects."""


class InvariantError(RuntimeError):
    """A state or profile violates one of its structural invariants."""


class DivergenceError(RuntimeError):
    """A minimizer produced a non-finite energy.

    The last finite iterate (if any) is kept on ``state`` and the energy
    trace on ``history`` so that callers can inspect what went wrong.
    """

    def __init__(self, message, state=None, history=None):
        super().__init__(message)
        self.state = state
        self.history = list(history or [])
