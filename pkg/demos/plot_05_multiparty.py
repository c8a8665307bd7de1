"""
One buyer, three sellers
========================

A buyer negotiates with every seller of the product at once, one episode
per seller.  When all of them have settled it keeps the cheapest deal and
releases the others.  One seller shows up a tick late and joins the
negotiation already under way.
"""

from pathlib import Path

from multinego import Scenario, replay, run

here = Path(__file__).resolve().parent
scenario = Scenario.load(here.parent / "scenarios" / "three_sellers.yaml")
transcript = run(scenario)

for e in transcript.episodes:
    total = "-" if e["total"] is None else f"{e['total']:.3f}"
    print(f"{e['episode_id']:40s} {e['outcome']:8s} rounds={e['rounds_used']} total={total}")

print("buyer chose:", transcript.agent("buyer")["chosen"])
print("replay:", replay(transcript))
