"""
Messages and the episode state machine
======================================

Every message is one JSON line.  An episode tracks one status per issue and
only changes through legal messages or the end of a round.
"""

from multinego import EpisodeState, Kind, NegotiationMessage, ProtocolViolation, apply, decode, encode, tick_round

ep = EpisodeState.new("demo", {"buyer", "seller"}, ["price", "support"], max_rounds=3)


def send(kind, sender, rnd, **payload):
    global ep
    msg = NegotiationMessage(kind, sender, "demo", rnd, payload)
    line = encode(msg)
    print(line.decode().rstrip())
    ep = apply(ep, decode(line))


send(Kind.OFFER, "seller", 1, prices={"price": 120.0, "support": 30.0})
send(Kind.ACCEPT, "buyer", 1, issue="support")
send(Kind.COUNTER_OFFER, "buyer", 1, prices={"price": 90.0})
ep = tick_round(ep)
send(Kind.COUNTER_OFFER, "seller", 2, prices={"price": 100.0})
send(Kind.ACCEPT, "buyer", 2, issue="price")
print({k: s.value for k, s in ep.statuses().items()})

# nothing can be finalized twice
send(Kind.FINALIZE, "buyer", 2)
try:
    send(Kind.OFFER, "seller", 2, prices={"price": 1.0})
except ProtocolViolation as exc:
    print("refused:", exc)
print(ep.summary())
