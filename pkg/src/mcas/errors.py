"""Exception types shared across the package."""


class McasError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(McasError):
    """An array argument does not match the model's dimensions."""


class ZeroProbabilityObservation(McasError):
    """Bayes update conditioned on an observation with zero likelihood.

    This is a meaningful signal, not a numerical hiccup: during pruning it
    marks an infeasible branch, in the simulator it marks a model bug.
    """

    def __init__(self, action, observation):
        super().__init__(
            f"observation {observation} has zero probability under action {action}"
        )
        self.action = action
        self.observation = observation


class DisjointSupports(McasError):
    """Conflation of beliefs whose pointwise product is identically zero."""


class EmptyAfterPrune(McasError):
    """Every member of a belief set was inconsistent with the suggestion."""


class AllCandidatesInvalid(McasError):
    """No joint-belief candidate survived conflation."""


class UnsupportedSpec(McasError):
    """Benchmark name, agent count, or qualifier outside the supported set."""


class ModelSyntaxError(McasError):
    """Malformed model file. Carries the 1-based line and column."""

    def __init__(self, line, column, message):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ModelSemanticError(McasError):
    """Well-formed model file with inconsistent contents."""


class StaleCacheError(McasError):
    """A cached policy does not match the model/params that requested it."""


class NonConvergence(McasError):
    """The solver produced no usable value function within its budget."""
