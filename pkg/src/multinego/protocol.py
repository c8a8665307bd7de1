"""Message vocabulary, line codec and the episode state machine.

One message is one line of JSON with sorted keys, so encoding is canonical
and transcripts can be compared byte for byte.  Episode and issue-session
states are immutable; :func:`apply` and :func:`tick_round` return new ones.

Round bookkeeping: ``rounds_used`` counts completed rounds.  Every message
carries the 1-based round it belongs to.  A message stamped
``rounds_used + 2`` or later implicitly closes the rounds in between, which
is what lets a transcript be replayed without separate tick records.
Terminal kinds (FINALIZE, DECLINE, WITHDRAW) may be stamped one past
``max_rounds`` because they are sent after the last round has closed.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping


class Kind(str, enum.Enum):
    SEND_ADVERTISEMENT = "SEND_ADVERTISEMENT"
    SEND_IDENTITY = "SEND_IDENTITY"
    CONNECT_THREAD = "CONNECT_THREAD"
    OFFER = "OFFER"
    COUNTER_OFFER = "COUNTER_OFFER"
    ACCEPT = "ACCEPT"
    DECLINE = "DECLINE"
    REJECT = "REJECT"
    WITHDRAW = "WITHDRAW"
    FINALIZE = "FINALIZE"


PRE_EPISODE = frozenset({Kind.SEND_ADVERTISEMENT, Kind.SEND_IDENTITY})
PRICED = frozenset({Kind.OFFER, Kind.COUNTER_OFFER})
CLOSING = frozenset({Kind.FINALIZE, Kind.DECLINE, Kind.WITHDRAW})


class DecodeError(ValueError):
    pass


class MalformedMessage(DecodeError):
    pass


class UnknownKind(DecodeError):
    pass


class PayloadMismatch(DecodeError):
    pass


class ProtocolViolation(Exception):
    """An illegal transition; ``status`` and ``kind`` name the offending pair."""

    def __init__(self, message: str, status: str | None = None, kind: Kind | str | None = None):
        super().__init__(message)
        self.status = status
        self.kind = Kind(kind) if isinstance(kind, str) and kind in Kind.__members__ else kind


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def check_payload(kind: Kind, payload: Mapping[str, Any]) -> None:
    """Raise :class:`PayloadMismatch` unless ``payload`` fits ``kind``."""
    if not isinstance(payload, Mapping):
        raise PayloadMismatch("payload must be an object")
    if kind in PRICED:
        prices = payload.get("prices")
        if set(payload) != {"prices"} or not isinstance(prices, Mapping) or not prices:
            raise PayloadMismatch(f"{kind.value} needs a non-empty 'prices' map")
        for issue, price in prices.items():
            if not _is_number(price):
                raise PayloadMismatch(f"price for {issue!r} is not a finite number")
    elif kind in (Kind.ACCEPT, Kind.REJECT):
        if set(payload) != {"issue"} or not isinstance(payload["issue"], str):
            raise PayloadMismatch(f"{kind.value} carries exactly one 'issue' id")
    elif kind is Kind.DECLINE:
        issues = payload.get("issues")
        if set(payload) != {"issues"} or not isinstance(issues, list) or not issues:
            raise PayloadMismatch("DECLINE needs a non-empty 'issues' list")
        if not all(isinstance(i, str) for i in issues):
            raise PayloadMismatch("DECLINE issue ids must be strings")
    elif kind in (Kind.FINALIZE, Kind.WITHDRAW):
        if payload:
            raise PayloadMismatch(f"{kind.value} carries no payload")
    elif kind is Kind.CONNECT_THREAD:
        if set(payload) != {"issues", "participants", "max_rounds"}:
            raise PayloadMismatch("CONNECT_THREAD needs issues, participants and max_rounds")
        issues, parts = payload["issues"], payload["participants"]
        if not isinstance(issues, list) or not issues or not all(isinstance(i, str) for i in issues):
            raise PayloadMismatch("CONNECT_THREAD issues must be a non-empty list of ids")
        if len(set(issues)) != len(issues):
            raise PayloadMismatch("CONNECT_THREAD issue ids must be unique")
        if not isinstance(parts, list) or len(set(parts)) < 2 or not all(isinstance(p, str) for p in parts):
            raise PayloadMismatch("CONNECT_THREAD needs at least two participants")
        mr = payload["max_rounds"]
        if not isinstance(mr, int) or isinstance(mr, bool) or mr < 1:
            raise PayloadMismatch("max_rounds must be a positive integer")
    elif kind is Kind.SEND_IDENTITY:
        if set(payload) != {"name", "address", "kind"} or payload.get("kind") not in ("buyer", "seller"):
            raise PayloadMismatch("SEND_IDENTITY needs name, address and kind (buyer|seller)")
    elif kind is Kind.SEND_ADVERTISEMENT:
        if not {"ad_id", "product_id", "validity"} <= set(payload):
            raise PayloadMismatch("SEND_ADVERTISEMENT needs ad_id, product_id and validity")
        v = payload["validity"]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise PayloadMismatch("validity must be a positive integer")


@dataclass(frozen=True)
class NegotiationMessage:
    kind: Kind
    sender: str
    episode_id: str | None = None
    round: int = 0
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        check_payload(self.kind, self.payload)
        if self.kind in PRE_EPISODE:
            if self.episode_id is not None:
                raise PayloadMismatch(f"{self.kind.value} is sent before any episode exists")
        elif not self.episode_id:
            raise PayloadMismatch(f"{self.kind.value} needs an episode_id")
        if not isinstance(self.round, int) or isinstance(self.round, bool) or self.round < 0:
            raise PayloadMismatch("round must be a non-negative integer")

    @property
    def prices(self) -> dict[str, float]:
        return dict(self.payload.get("prices", {}))

    @property
    def issue(self) -> str | None:
        return self.payload.get("issue")


def encode(msg: NegotiationMessage) -> bytes:
    obj = {
        "episode_id": msg.episode_id,
        "kind": msg.kind.value,
        "payload": msg.payload,
        "round": msg.round,
        "sender": msg.sender,
    }
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False, ensure_ascii=False)
    return text.encode("utf-8") + b"\n"


_FIELDS = {"episode_id", "kind", "payload", "round", "sender"}


def decode(line: bytes | str) -> NegotiationMessage:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedMessage(f"not utf-8: {exc}") from None
    line = line.rstrip("\n")
    if "\n" in line:
        raise MalformedMessage("embedded newline")
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except (json.JSONDecodeError, ValueError, RecursionError) as exc:
        raise MalformedMessage(f"not a JSON line: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedMessage("message must be a JSON object")
    if "kind" not in obj:
        raise MalformedMessage("missing 'kind'")
    missing = _FIELDS - set(obj)
    if missing:
        raise MalformedMessage(f"missing fields {sorted(missing)}")
    extra = set(obj) - _FIELDS
    if extra:
        raise MalformedMessage(f"unexpected fields {sorted(extra)}")
    if not isinstance(obj["kind"], str) or obj["kind"] not in Kind.__members__:
        raise UnknownKind(f"unknown kind {obj['kind']!r}")
    if not isinstance(obj["sender"], str) or not obj["sender"]:
        raise MalformedMessage("sender must be a non-empty string")
    if obj["episode_id"] is not None and not isinstance(obj["episode_id"], str):
        raise MalformedMessage("episode_id must be a string or null")
    r = obj["round"]
    if not isinstance(r, int) or isinstance(r, bool) or r < 0:
        raise MalformedMessage("round must be a non-negative integer")
    return NegotiationMessage(
        kind=Kind(obj["kind"]),
        sender=obj["sender"],
        episode_id=obj["episode_id"],
        round=r,
        payload=obj["payload"],
    )


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


# -- episode state machine ----------------------------------------------------


class Status(str, enum.Enum):
    OPEN = "OPEN"
    TEMP_ACCEPTED = "TEMP_ACCEPTED"
    REJECTED = "REJECTED"
    FINALIZED = "FINALIZED"


class Outcome(str, enum.Enum):
    RUNNING = "RUNNING"
    AGREED = "AGREED"
    ABORTED = "ABORTED"


@dataclass(frozen=True)
class IssueSessionState:
    issue_id: str
    status: Status = Status.OPEN
    last_offer_price: float | None = None
    round: int = 0
    last_offer_sender: str | None = None
    # (sender, round) of each party's latest priced offer on this issue
    offer_rounds: tuple[tuple[str, int], ...] = ()

    def last_round_of(self, sender: str) -> int:
        return dict(self.offer_rounds).get(sender, 0)


@dataclass(frozen=True)
class EpisodeState:
    episode_id: str
    participants: frozenset[str]
    issue_sessions: Mapping[str, IssueSessionState]
    max_rounds: int
    rounds_used: int = 0
    outcome: Outcome = Outcome.RUNNING

    @classmethod
    def new(cls, episode_id: str, participants, issues, max_rounds: int) -> EpisodeState:
        if max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        sessions = {i: IssueSessionState(i) for i in issues}
        if not sessions:
            raise ValueError("an episode needs at least one issue")
        return cls(episode_id, frozenset(participants), sessions, max_rounds)

    @property
    def terminal(self) -> bool:
        return self.outcome is not Outcome.RUNNING

    def statuses(self) -> dict[str, Status]:
        return {k: s.status for k, s in self.issue_sessions.items()}

    def open_issues(self) -> list[str]:
        return [k for k, s in self.issue_sessions.items() if s.status is Status.OPEN]

    def fully_accepted(self) -> bool:
        return all(s.status is Status.TEMP_ACCEPTED for s in self.issue_sessions.values())

    def accepted_prices(self) -> dict[str, float]:
        return {
            k: s.last_offer_price
            for k, s in self.issue_sessions.items()
            if s.status in (Status.TEMP_ACCEPTED, Status.FINALIZED)
        }

    def summary(self) -> dict:
        prices = self.accepted_prices() if self.outcome is Outcome.AGREED else {}
        return {
            "episode_id": self.episode_id,
            "outcome": self.outcome.value,
            "rounds_used": self.rounds_used,
            "participants": sorted(self.participants),
            "statuses": {k: s.status.value for k, s in sorted(self.issue_sessions.items())},
            "prices": dict(sorted(prices.items())),
            "total": math.fsum(prices.values()) if prices else None,
        }


def open_episode(msg: NegotiationMessage) -> EpisodeState:
    """Build the session map announced by a CONNECT_THREAD handshake."""
    if msg.kind is not Kind.CONNECT_THREAD:
        raise ProtocolViolation(f"{msg.kind.value} cannot open an episode", None, msg.kind)
    p = msg.payload
    if msg.sender not in p["participants"]:
        raise ProtocolViolation("CONNECT_THREAD sender must be a participant", None, msg.kind)
    return EpisodeState.new(msg.episode_id, p["participants"], p["issues"], p["max_rounds"])


def tick_round(ep: EpisodeState) -> EpisodeState:
    """Close one round; hitting ``max_rounds`` with anything still open aborts."""
    if ep.terminal:
        raise ProtocolViolation(f"tick on terminal episode ({ep.outcome.value})", ep.outcome.value, None)
    if ep.rounds_used >= ep.max_rounds:
        raise ProtocolViolation("round limit already reached", ep.outcome.value, None)
    used = ep.rounds_used + 1
    outcome = ep.outcome
    if used == ep.max_rounds and ep.open_issues():
        outcome = Outcome.ABORTED
    return replace(ep, rounds_used=used, outcome=outcome)


def null_response(ep: EpisodeState) -> EpisodeState:
    """The counterpart answered with nothing: the deal is off."""
    if ep.terminal:
        raise ProtocolViolation(f"null response on terminal episode ({ep.outcome.value})", ep.outcome.value, None)
    return replace(ep, outcome=Outcome.ABORTED)


def _violation(session: IssueSessionState | None, kind: Kind, why: str) -> ProtocolViolation:
    status = session.status.value if session else None
    return ProtocolViolation(f"illegal ({status}, {kind.value}): {why}", status, kind)


def apply(ep: EpisodeState, msg: NegotiationMessage) -> EpisodeState:
    """Apply one message to an episode, or raise :class:`ProtocolViolation`."""
    kind = msg.kind
    if msg.episode_id != ep.episode_id:
        raise ProtocolViolation(f"message for episode {msg.episode_id!r} applied to {ep.episode_id!r}", None, kind)
    if msg.sender not in ep.participants:
        raise ProtocolViolation(f"{msg.sender!r} is not a participant", None, kind)
    if ep.terminal:
        raise ProtocolViolation(f"illegal ({ep.outcome.value}, {kind.value}): episode terminal", ep.outcome.value, kind)
    if kind in PRE_EPISODE or kind is Kind.CONNECT_THREAD:
        raise ProtocolViolation(f"{kind.value} is not an in-episode message", None, kind)

    limit = ep.max_rounds + 1 if kind in CLOSING else ep.max_rounds
    if msg.round < ep.rounds_used + 1:
        raise ProtocolViolation(f"stale round {msg.round} (rounds used {ep.rounds_used})", None, kind)
    if msg.round > limit:
        raise ProtocolViolation(f"round {msg.round} beyond limit {ep.max_rounds}", None, kind)
    while ep.rounds_used + 1 < msg.round:
        ep = tick_round(ep)
        if ep.terminal:
            raise ProtocolViolation(
                f"illegal ({ep.outcome.value}, {kind.value}): round limit closed the episode", ep.outcome.value, kind
            )

    sessions = dict(ep.issue_sessions)

    def session(issue_id: str) -> IssueSessionState:
        if issue_id not in sessions:
            raise ProtocolViolation(f"unknown issue {issue_id!r}", None, kind)
        return sessions[issue_id]

    outcome = ep.outcome
    if kind in PRICED:
        for issue_id, price in msg.prices.items():
            s = session(issue_id)
            if s.status is not Status.OPEN:
                raise _violation(s, kind, f"issue {issue_id!r} is sealed")
            if kind is Kind.OFFER and s.last_offer_sender is not None:
                raise _violation(s, kind, f"issue {issue_id!r} already has offers; counter-offer instead")
            if kind is Kind.COUNTER_OFFER and s.last_offer_sender in (None, msg.sender):
                raise _violation(s, kind, f"nothing from the counterpart to counter on {issue_id!r}")
            if msg.round <= s.last_round_of(msg.sender):
                raise _violation(s, kind, f"round must increase for {msg.sender!r} on {issue_id!r}")
            rounds = dict(s.offer_rounds)
            rounds[msg.sender] = msg.round
            sessions[issue_id] = replace(
                s,
                last_offer_price=price,
                last_offer_sender=msg.sender,
                round=msg.round,
                offer_rounds=tuple(sorted(rounds.items())),
            )
    elif kind is Kind.ACCEPT:
        s = session(msg.issue)
        if s.status is not Status.OPEN:
            raise _violation(s, kind, "only open issues can be accepted")
        if s.last_offer_sender in (None, msg.sender):
            raise _violation(s, kind, "no counterpart offer to accept")
        sessions[msg.issue] = replace(s, status=Status.TEMP_ACCEPTED)
    elif kind is Kind.REJECT:
        s = session(msg.issue)
        if s.status is not Status.OPEN:
            raise _violation(s, kind, "only open issues can be rejected")
        sessions[msg.issue] = replace(s, status=Status.REJECTED)
        outcome = Outcome.ABORTED
    elif kind is Kind.DECLINE:
        for issue_id in msg.payload["issues"]:
            s = session(issue_id)
            if s.status is not Status.TEMP_ACCEPTED:
                raise _violation(s, kind, "only temporarily accepted issues can be declined")
            sessions[issue_id] = replace(s, status=Status.REJECTED)
        outcome = Outcome.ABORTED
    elif kind is Kind.WITHDRAW:
        outcome = Outcome.ABORTED
    elif kind is Kind.FINALIZE:
        for s in sessions.values():
            if s.status is not Status.TEMP_ACCEPTED:
                raise _violation(s, kind, f"issue {s.issue_id!r} not accepted")
        sessions = {k: replace(s, status=Status.FINALIZED) for k, s in sessions.items()}
        outcome = Outcome.AGREED
    else:  # pragma: no cover - every kind handled above
        raise ProtocolViolation(f"unhandled kind {kind}", None, kind)

    return replace(ep, issue_sessions=sessions, outcome=outcome)
