"""Exception types shared across the solver and reconstruction modules."""


class GridError(ValueError):
    """Invalid cross-section grid parameters."""


class FactorizationError(RuntimeError):
    """Direct factorization of a fiber operator failed (0 in the discrete
    spectrum, inadmissible potential, or a grid too coarse to be definite)."""


class ConvergenceError(RuntimeError):
    """An iteration did not reach its tolerance within the iteration budget."""

    def __init__(self, message, iterations=None, estimate=None):
        super().__init__(message)
        self.iterations = iterations
        self.estimate = estimate


class CharacteristicLatticeError(RuntimeError):
    """A torus frequency sits (numerically) on the characteristic set of a
    conjugated symbol, so the remainder solve cannot proceed."""

    def __init__(self, message, q=None):
        super().__init__(message)
        self.q = q


class TauTooSmallError(RuntimeError):
    """The remainder fixed point diverged; the phase's large parameter is
    below the contraction threshold for this potential."""


class AliasingError(ValueError):
    """Quasi-momentum grid too coarse for the cell window being transformed."""


class ConfigError(ValueError):
    """Configuration validation failures; carries the full list of problems."""

    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)
