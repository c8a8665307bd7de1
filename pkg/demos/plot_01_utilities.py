"""
Utility bounds and concession
=============================

Each issue of a product carries a cost range, a weight and a few
multipliers.  Together they give the interval of prices an agent can live
with, and a per-round penalty pulls the quoted price across it.
"""

from multinego import (
    ConcessionState,
    IssueValuation,
    LambdaInputs,
    compute_u_max,
    compute_u_min,
    decay_utility,
    derive_lambda,
    max_payoff,
    min_payoff,
)
from multinego.scenarios import antivirus_seller_valuations
from multinego.valuation import concession_states

# the seller's .iso scanning issue: cost 15 to 17, weight 8, two multipliers
iso = IssueValuation("iso", 15.0, 17.0, 8.0, {"updates": 1.0, "scope_of_protection": 0.9})
print("iso bounds:", compute_u_min(iso), compute_u_max(iso))

# payoffs are plain sums over every issue of the product
vals = antivirus_seller_valuations()
print("seller payoffs:", min_payoff(vals.values()), max_payoff(vals.values()))

# start at the ceiling and concede over ten rounds; the penalty spreads the
# remaining gap over the rounds left, and the growing round index speeds it up
state: ConcessionState = concession_states({"iso": iso}, "max")["iso"]
for t in range(1, 11):
    lam = derive_lambda(LambdaInputs((state,), 11 - t))
    state = state.moved_to(decay_utility(state, lam, t))
    print(f"round {t:2d}  lambda={lam:.5f}  quote={state.u_current:.4f}")
