"""
Advertisements and their lifetime
=================================

Agents announce themselves and what they want to trade.  The broker keeps
every advertisement for a fixed number of ticks, groups buyers and sellers
of the same product, and keeps ads alive while their owner negotiates.
"""

from multinego import AdvertisementRecord, AgentRecord, Broker, ProductRecord
from multinego.scenarios import antivirus_tree

broker = Broker()
broker.register_product(ProductRecord("antivirus", "Antivirus suite"), antivirus_tree())
broker.register_agent(AgentRecord("org-a", "Organization A", "10.0.0.1:7001", "buyer"))
broker.register_agent(AgentRecord("org-b", "Organization B", "10.0.0.2:7001", "seller"))
broker.register_agent(AgentRecord("org-c", "Organization C", "10.0.0.3:7001", "seller"))

# org-c advertises for two ticks and nobody shows up
broker.submit_advertisement(AdvertisementRecord("ad:org-c", "antivirus", "org-c", 2))
for tick in (1, 2):
    print("tick", tick, "expired:", broker.tick())

# a buyer and a seller meet
broker.submit_advertisement(AdvertisementRecord("ad:org-a", "antivirus", "org-a", 1))
broker.submit_advertisement(AdvertisementRecord("ad:org-b", "antivirus", "org-b", 1,
                                                {"iso": {"updates": 1.0, "scope_of_protection": 0.9}}))
[proposal] = broker.match_advertisements()
print("matched:", proposal.agent_ids, proposal.addresses)
print("published attributes:", broker.published_nfa("antivirus"))

# once they negotiate, their ads outlive the counter
chain = broker.open_negotiation("antivirus", proposal.agent_ids)
broker.tick()
broker.tick()
print("live while negotiating:", sorted(broker.ads))
broker.close_negotiation(chain)
print("after closing:", sorted(broker.ads))
