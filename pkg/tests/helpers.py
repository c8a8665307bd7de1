"""Oracles shared by the test modules."""

from __future__ import annotations

import itertools
import json
from collections import defaultdict

from multinego import protocol as P
from multinego.protocol import EpisodeState, Kind, NegotiationMessage, Outcome, ProtocolViolation, Status

ISSUES = ("a", "b")
PARTIES = ("A", "B")
EP = "ep"


def alphabet(max_round: int = 3):
    """Every message the model checker may send, plus the two non-message events."""
    subsets = [list(c) for r in (1, 2) for c in itertools.combinations(ISSUES, r)]
    out = []
    for sender in PARTIES + ("Z",):
        for rnd in range(0, max_round + 1):
            for kind in (Kind.OFFER, Kind.COUNTER_OFFER):
                for sub in subsets:
                    out.append(NegotiationMessage(kind, sender, EP, rnd, {"prices": {i: 1.0 for i in sub}}))
            for kind in (Kind.ACCEPT, Kind.REJECT):
                for i in ISSUES:
                    out.append(NegotiationMessage(kind, sender, EP, rnd, {"issue": i}))
            for sub in subsets:
                out.append(NegotiationMessage(Kind.DECLINE, sender, EP, rnd, {"issues": sub}))
            out.append(NegotiationMessage(Kind.WITHDRAW, sender, EP, rnd, {}))
            out.append(NegotiationMessage(Kind.FINALIZE, sender, EP, rnd, {}))
    out.append(NegotiationMessage(Kind.FINALIZE, "A", "other-episode", 1, {}))
    return out + ["TICK", "NULL"]


def state_key(ep: EpisodeState):
    return (ep.outcome, ep.rounds_used, tuple(sorted(ep.issue_sessions.items())))


def step(ep: EpisodeState, event):
    if event == "TICK":
        return P.tick_round(ep)
    if event == "NULL":
        return P.null_response(ep)
    return P.apply(ep, event)


def check_transition(before: EpisodeState, event, after: EpisodeState | None) -> list[str]:
    """Invariant violations of one transition (``after`` is None when it was refused)."""
    problems = []
    if after is None:
        return problems
    if before.terminal:
        problems.append(f"terminal episode changed by {event}")
    agreed = after.outcome is Outcome.AGREED
    all_final = all(s.status is Status.FINALIZED for s in after.issue_sessions.values())
    if agreed != all_final:
        problems.append(f"AGREED={agreed} but all-FINALIZED={all_final}")
    if after.rounds_used < before.rounds_used:
        problems.append("rounds_used decreased")
    if after.rounds_used > after.max_rounds:
        problems.append("rounds_used beyond max_rounds")
    if after.rounds_used == after.max_rounds and after.open_issues() and after.outcome is Outcome.RUNNING:
        problems.append("round limit reached with open issues but still running")
    for k, s in after.issue_sessions.items():
        b = before.issue_sessions[k]
        if s.round < b.round:
            problems.append(f"session {k} round decreased")
        for sender, r in b.offer_rounds:
            if s.last_round_of(sender) < r:
                problems.append(f"session {k} round of {sender} decreased")
        if b.status in (Status.FINALIZED, Status.REJECTED) and s.status is not b.status:
            problems.append(f"session {k} left terminal status {b.status}")
    return problems


def model_check(depth: int = 6, max_rounds: int = 2):
    """Breadth-first over distinct states, every event from every state.

    Returns ``(paths, states, transitions, problems)`` where ``paths`` counts
    the event sequences of length <= depth that the search covers.
    """
    events = alphabet(max_rounds + 1)
    start = EpisodeState.new(EP, PARTIES, ISSUES, max_rounds)
    frontier = {state_key(start): (start, 1)}
    seen = {state_key(start)}
    paths = 1
    transitions = 0
    problems = []
    for _ in range(depth):
        nxt: dict = {}
        for ep, mult in frontier.values():
            for ev in events:
                transitions += 1
                try:
                    after = step(ep, ev)
                except ProtocolViolation:
                    after = None
                problems.extend(check_transition(ep, ev, after))
                paths += mult
                if after is None:
                    continue
                key = state_key(after)
                if key in nxt:
                    nxt[key] = (after, nxt[key][1] + mult)
                else:
                    nxt[key] = (after, mult)
                seen.add(key)
        frontier = nxt
    return paths, len(seen), transitions, problems


def price_trajectories(transcript):
    """Per episode and sender, the running total of quoted prices after each priced move."""
    last: dict = defaultdict(dict)
    out: dict = defaultdict(lambda: defaultdict(list))
    for line in transcript.lines:
        obj = json.loads(line)
        if obj["kind"] not in ("OFFER", "COUNTER_OFFER"):
            continue
        key = (obj["episode_id"], obj["sender"])
        last[key].update(obj["payload"]["prices"])
        out[obj["episode_id"]][obj["sender"]].append(sum(last[key].values()))
    return out


def kinds(transcript):
    return [json.loads(line)["kind"] for line in transcript.lines]
