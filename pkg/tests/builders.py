"""Small market constructors shared by the tests."""

from envyfree.functions import LinearDemand, ZeroCost
from envyfree.market import BuyerType, Item, MarketInstance
from envyfree.oracle import InstanceSpec, gen_random_mhr_instance


def market(demands, costs, edges=None):
    """Buyers b0.., items t0..; ``edges`` as (buyer index, item index) pairs,
    complete bipartite when omitted."""
    buyers = [BuyerType(f"b{i}", d) for i, d in enumerate(demands)]
    items = [Item(f"t{t}", c) for t, c in enumerate(costs)]
    if edges is None:
        edges = [(i, t) for i in range(len(buyers)) for t in range(len(items))]
    return MarketInstance(buyers, items, [(f"b{i}", f"t{t}") for i, t in edges])


def linear_zero():
    """One buyer lambda(x) = 1 - x and one zero-cost item."""
    return market([LinearDemand(1.0, 1.0)], [ZeroCost()])


def random_instance(seed, n_buyers=4, n_items=4, **kw):
    return gen_random_mhr_instance(InstanceSpec(seed=seed, n_buyers=n_buyers, n_items=n_items, **kw))
