"""Exception types shared by the library and mapped to CLI exit codes."""


class PricingError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ScenarioError(PricingError):
    """A scenario document could not be parsed or is malformed."""

    exit_code = 2


class PreconditionError(PricingError):
    """An algorithm was invoked on an instance outside its domain."""

    exit_code = 3


class SolverError(PricingError):
    """A numerical routine failed to produce a certified answer."""

    exit_code = 4


class InfeasibleDemandError(SolverError):
    """Demand cannot be routed through the item capacities.

    Attributes:
        buyers: ids (or indices) of the buyers on the deficient side of the cut.
        items: ids (or indices) of the items those buyers can reach.
        deficit: amount of demand that cannot be served.
    """

    def __init__(self, message, buyers=(), items=(), deficit=0.0):
        super().__init__(message)
        self.buyers = tuple(buyers)
        self.items = tuple(items)
        self.deficit = float(deficit)


class OracleBudgetError(PricingError):
    """The brute-force oracle would exceed its evaluation budget."""

    exit_code = 5
