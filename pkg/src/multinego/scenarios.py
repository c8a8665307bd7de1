"""Ready-made scenarios: the antivirus purchase and random instances."""

from __future__ import annotations

import random

from .agent import AgentConfig
from .simulation import AgentEntry, Scenario
from .valuation import IssueNode, IssueValuation, NonFunctionalAttributes

ANTIVIRUS_NFA = {"updates": 1.0, "scope_of_protection": 0.9}


def antivirus_tree() -> IssueNode:
    return IssueNode("antivirus", "Antivirus product", (
        IssueNode("compressed_files", "Compressed file scanning", (
            IssueNode("iso", ".iso images"),
            IssueNode("zip", ".zip archives"),
        )),
        IssueNode("realtime", "Real-time protection"),
        IssueNode("email", "E-mail scanning"),
        IssueNode("firewall", "Firewall"),
    ))


def antivirus_seller_valuations() -> dict[str, IssueValuation]:
    """Seller side of the antivirus run.

    Only the ``.iso`` issue has published numbers (15.0 / 17.0, weight 8,
    updates 1, scope 0.9).  The other four are filled in so the payoffs sum to
    351.0 and 379.8: each contributes 60.75 / 64.35 at the same weight and
    attributes.
    """
    nfa = NonFunctionalAttributes.of(ANTIVIRUS_NFA)
    vals = {"iso": IssueValuation("iso", 15.0, 17.0, 8.0, nfa)}
    for issue in ("zip", "realtime", "email", "firewall"):
        # 60.75 / 7.2 and 64.35 / 7.2
        vals[issue] = IssueValuation(issue, 8.4375, 8.9375, 8.0, nfa)
    return vals


def antivirus_scenario(seed: int = 0, max_rounds: int = 10) -> Scenario:
    """Organization B sells, organization A buys with aggregate bounds 20 / 30."""
    tree = antivirus_tree()
    seller = AgentConfig(
        agent_id="org-b", kind="seller", tree=tree, valuations=antivirus_seller_valuations(),
        max_rounds=max_rounds, name="Organization B", address="10.0.0.2:7001", product_id="antivirus",
    )
    buyer = AgentConfig(
        agent_id="org-a", kind="buyer", tree=tree, min_cost=20.0, max_cost=30.0, weights=8.0,
        max_rounds=max_rounds, name="Organization A", address="10.0.0.1:7001", product_id="antivirus",
    )
    return Scenario(
        products={"antivirus": ("Antivirus suite", tree)},
        agents=[AgentEntry(seller), AgentEntry(buyer)],
        seed=seed,
    )


def flat_tree(n: int, root: str = "product") -> IssueNode:
    return IssueNode(root, root, tuple(IssueNode(f"i{k}", f"issue {k}") for k in range(n)))


def random_seller_valuations(rng: random.Random, tree: IssueNode) -> dict[str, IssueValuation]:
    out = {}
    for issue in tree.leaf_ids():
        cost = rng.uniform(5.0, 20.0)
        out[issue] = IssueValuation(
            issue, cost, cost * rng.uniform(1.05, 1.6), rng.uniform(1.0, 10.0),
            NonFunctionalAttributes.of({"updates": rng.uniform(0.8, 1.2), "scope": rng.uniform(0.5, 1.0)}),
        )
    return out


def counterpart_valuations(rng: random.Random, seller: dict[str, IssueValuation], overlap: bool
                           ) -> dict[str, IssueValuation]:
    """Buyer valuations on the seller's weights and attributes.

    With ``overlap`` every issue's buyer ceiling reaches the seller's floor;
    otherwise the ceiling falls short on at least one issue.
    """
    issues = sorted(seller)
    short = set() if overlap else set(rng.sample(issues, rng.randint(1, len(issues))))
    out = {}
    for issue, s in seller.items():
        floor = s.actual_cost
        if issue in short:
            hi = floor * rng.uniform(0.5, 0.95)
        else:
            hi = floor * rng.uniform(1.0, 1.4)
        lo = min(hi, floor) * rng.uniform(0.4, 0.9)
        out[issue] = IssueValuation(issue, lo, hi, s.weight, s.nfa)
    return out


def random_pair_scenario(rng: random.Random, overlap: bool = True, max_rounds: int = 10,
                         issues: int | None = None) -> Scenario:
    """One buyer and one seller with explicit per-issue valuations."""
    tree = flat_tree(issues or rng.randint(1, 5))
    seller = random_seller_valuations(rng, tree)
    buyer = counterpart_valuations(rng, seller, overlap)
    return Scenario(
        products={"product": ("product", tree)},
        agents=[
            AgentEntry(AgentConfig("seller", "seller", tree, seller, max_rounds=max_rounds, product_id="product")),
            AgentEntry(AgentConfig("buyer", "buyer", tree, buyer, max_rounds=max_rounds, product_id="product")),
        ],
        seed=rng.randrange(2**31),
    )


def random_market_scenario(rng: random.Random, sellers: int = 3, max_rounds: int = 10,
                           issues: int | None = None) -> Scenario:
    """One buyer facing several sellers of the same goods, all overlapping with it."""
    tree = flat_tree(issues or rng.randint(1, 4))
    base = random_seller_valuations(rng, tree)
    buyer = {
        k: IssueValuation(k, v.actual_cost * rng.uniform(0.4, 0.8), v.actual_cost * rng.uniform(1.5, 2.0),
                          v.weight, v.nfa)
        for k, v in base.items()
    }
    agents = [AgentEntry(AgentConfig("buyer", "buyer", tree, buyer, max_rounds=max_rounds, product_id="product"))]
    for j in range(sellers):
        vals = {}
        for k, v in base.items():
            cost = v.actual_cost * rng.uniform(0.7, 1.0)
            vals[k] = IssueValuation(k, cost, cost * rng.uniform(1.05, 1.5), v.weight, v.nfa)
        agents.append(AgentEntry(AgentConfig(f"seller-{j}", "seller", tree, vals, max_rounds=max_rounds,
                                             product_id="product")))
    return Scenario(products={"product": ("product", tree)}, agents=agents, seed=rng.randrange(2**31))
