"""
The antivirus purchase
======================

Organization A wants an antivirus product and knows only that it should
cost between 20 and 30.  Organization B sells one whose cheapest acceptable
price is far above that, so the episode runs out of rounds.
"""

from multinego import replay, run
from multinego.scenarios import antivirus_scenario

transcript = run(antivirus_scenario(seed=0))

for a in transcript.agents:
    print(f"{a['agent_id']} ({a['kind']}): payoffs {a['min_payoff']:.4f} .. {a['max_payoff']:.4f}")

print()
for line in transcript.lines[:8]:
    print(line.decode().rstrip())
print("...")
[episode] = transcript.episodes
print(episode["outcome"], "after", episode["rounds_used"], "rounds")

# the transcript checks itself
print("replay:", replay(transcript.to_bytes()))
