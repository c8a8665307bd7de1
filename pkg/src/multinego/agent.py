"""Buyer and seller agents.

An agent owns one :class:`MasterCoordinator`, which holds one
:class:`Coordinator` per counterpart.  A coordinator tracks its own view of
the episode plus one concession state per issue, and turns incoming offers
into ACCEPT messages and outgoing counter-offers.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from . import protocol as P
from .protocol import EpisodeState, Kind, NegotiationMessage, Outcome, ProtocolViolation, Status
from .valuation import (
    ConcessionState,
    DomainError,
    IssueNode,
    IssueValuation,
    LambdaInputs,
    NonFunctionalAttributes,
    buyer_accepts,
    concession_states,
    decay_utility,
    derive_lambda,
    max_payoff,
    min_payoff,
    raise_utility,
    seller_accepts,
)

log = logging.getLogger(__name__)

DEFAULT_WEIGHT = 1.0


class ConfigError(ValueError):
    """An agent or scenario description failed validation; the message leads with the field path."""


@dataclass
class AgentConfig:
    """Everything an agent knows before negotiating.

    Sellers list a valuation per leaf issue.  Buyers usually give only
    ``min_cost``/``max_cost`` for the whole product, optionally with weights
    (one number for all issues or a per-issue map) and non-functional
    attributes (one map for all issues or a map per issue).  A buyer may also
    give explicit per-leaf valuations.
    """

    agent_id: str
    kind: str
    tree: IssueNode
    valuations: dict[str, IssueValuation] = field(default_factory=dict)
    min_cost: float | None = None
    max_cost: float | None = None
    weights: float | Mapping[str, float] | None = None
    nfa: Mapping | None = None
    max_rounds: int = 10
    name: str = ""
    address: str = ""
    product_id: str | None = None
    validity: int = 5
    publish_nfa: bool = True

    def __post_init__(self):
        if self.kind not in ("buyer", "seller"):
            raise ConfigError(f"kind: expected buyer or seller, got {self.kind!r}")
        if not isinstance(self.max_rounds, int) or self.max_rounds < 1:
            raise ConfigError("max_rounds: must be a positive integer")
        leaves = set(self.tree.leaf_ids())
        if self.valuations:
            if set(self.valuations) != leaves:
                raise ConfigError(
                    f"valuations: must cover exactly the leaf issues {sorted(leaves)}, got {sorted(self.valuations)}"
                )
        elif self.kind == "seller":
            raise ConfigError("valuations: a seller needs one valuation per leaf issue")
        else:
            if self.min_cost is None or self.max_cost is None:
                raise ConfigError("min_cost: a buyer needs min_cost and max_cost or explicit valuations")
            if not (0 <= self.min_cost <= self.max_cost):
                raise ConfigError("min_cost: need 0 <= min_cost <= max_cost")

    @property
    def is_seller(self) -> bool:
        return self.kind == "seller"

    @classmethod
    def from_dict(cls, data: Mapping, tree: IssueNode | None = None, where: str = "agent") -> AgentConfig:
        try:
            if "tree" in data:
                tree = IssueNode.from_dict(data["tree"])
            if tree is None:
                raise ConfigError(f"{where}.tree: no product tree given")
            vals = {}
            for issue, v in (data.get("valuations") or {}).items():
                try:
                    vals[str(issue)] = IssueValuation.from_dict(str(issue), v)
                except (KeyError, TypeError, DomainError) as exc:
                    raise ConfigError(f"{where}.valuations.{issue}: {exc}") from None
            return cls(
                agent_id=str(data["id"]),
                kind=data["kind"],
                tree=tree,
                valuations=vals,
                min_cost=_opt_float(data.get("min_cost")),
                max_cost=_opt_float(data.get("max_cost")),
                weights=data.get("weights", data.get("weight")),
                nfa=data.get("nfa"),
                max_rounds=int(data.get("max_rounds", 10)),
                name=str(data.get("name", data["id"])),
                address=str(data.get("address", "")),
                product_id=data.get("product"),
                validity=int(data.get("validity", 5)),
                publish_nfa=bool(data.get("publish_nfa", True)),
            )
        except KeyError as exc:
            raise ConfigError(f"{where}.{exc.args[0]}: missing") from None
        except ConfigError as exc:
            msg = str(exc)
            raise ConfigError(msg if msg.startswith(where) else f"{where}.{msg}") from None
        except (TypeError, ValueError, DomainError) as exc:
            raise ConfigError(f"{where}: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> AgentConfig:
        return cls.from_dict(load_structured(path), where=str(path))


def _opt_float(x):
    return None if x is None else float(x)


def load_structured(path: str | Path):
    """Read a JSON or YAML file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        return yaml.safe_load(text)
    return json.loads(text)


def _per_issue_nfa(nfa: Mapping | None, issue: str) -> dict[str, float] | None:
    if not nfa:
        return None
    if all(isinstance(v, Mapping) for v in nfa.values()):
        return dict(nfa[issue]) if issue in nfa else None
    return dict(nfa)


def bootstrap_buyer(cfg: AgentConfig, published_nfa: Mapping[str, Mapping[str, float]] | None = None
                    ) -> dict[str, IssueValuation]:
    """Per-leaf valuations for a buyer that only knows aggregate costs.

    Each leaf gets ``min_cost / n`` and ``max_cost / n``.  Missing weights
    default to one shared value; missing non-functional attributes come from
    ``published_nfa`` (what sellers advertised) and otherwise default to 1.
    """
    if cfg.valuations:
        return dict(cfg.valuations)
    leaves = cfg.tree.leaf_ids()
    n = len(leaves)
    if n == 0:
        raise DomainError("no issues")
    out = {}
    for issue in leaves:
        if isinstance(cfg.weights, Mapping):
            weight = float(cfg.weights.get(issue, DEFAULT_WEIGHT))
        elif cfg.weights is not None:
            weight = float(cfg.weights)
        else:
            weight = DEFAULT_WEIGHT
        attrs = _per_issue_nfa(cfg.nfa, issue)
        if attrs is None:
            attrs = dict((published_nfa or {}).get(issue, {}))
        out[issue] = IssueValuation(
            issue_id=issue,
            actual_cost=cfg.min_cost / n,
            cost_with_margin=cfg.max_cost / n,
            weight=weight,
            nfa=NonFunctionalAttributes.of(attrs),
        )
    return out


def valuation_summary(agent_id: str, kind: str, vals: Mapping[str, IssueValuation]) -> dict:
    from .valuation import utility_bounds

    return {
        "agent_id": agent_id,
        "kind": kind,
        "min_payoff": min_payoff(vals.values()),
        "max_payoff": max_payoff(vals.values()),
        "issues": {
            k: {**v.to_dict(), "u_min": utility_bounds(v).u_min, "u_max": utility_bounds(v).u_max}
            for k, v in sorted(vals.items())
        },
    }


class Coordinator:
    """One agent's side of one episode with one counterpart."""

    def __init__(
        self,
        owner: str,
        kind: str,
        counterpart: str,
        episode: EpisodeState,
        valuations: Mapping[str, IssueValuation],
        clock: Callable[[], int] | None = None,
    ):
        if set(valuations) != set(episode.issue_sessions):
            raise ProtocolViolation(
                f"valuations {sorted(valuations)} do not match episode issues {sorted(episode.issue_sessions)}"
            )
        self.owner = owner
        self.kind = kind
        self.counterpart = counterpart
        self.episode = episode
        self.concessions: dict[str, ConcessionState] = concession_states(
            valuations, "max" if kind == "seller" else "min"
        )
        self.lambda_current = 0.0
        self.opened = False
        self.accepted_at: int | None = None
        self._clock = clock or itertools.count().__next__

    @property
    def round(self) -> int:
        """Index of the round currently being played (1-based)."""
        return self.episode.rounds_used + 1

    def rounds_remaining(self) -> int:
        return max(self.episode.max_rounds - self.episode.rounds_used, 1)

    def receive(self, msg: NegotiationMessage) -> None:
        self.episode = P.apply(self.episode, msg)
        if self.accepted_at is None and not self.episode.terminal and self.episode.fully_accepted():
            self.accepted_at = self._clock()

    def close_round(self) -> None:
        if not self.episode.terminal:
            self.episode = P.tick_round(self.episode)

    def accepts(self, issue: str, price: float) -> bool:
        bounds = self.concessions[issue].bounds
        return seller_accepts(price, bounds) if self.kind == "seller" else buyer_accepts(price, bounds)

    def evaluate_offer(self, offer: Mapping[str, float]) -> dict[str, str]:
        return evaluate_offer(self, offer)

    def respond(self, msg: NegotiationMessage) -> list[NegotiationMessage]:
        """ACCEPT messages for every acceptable issue in a counterpart offer."""
        verdicts = evaluate_offer(self, msg.prices)
        return [
            NegotiationMessage(Kind.ACCEPT, self.owner, self.episode.episode_id, self.round, {"issue": issue})
            for issue, verdict in verdicts.items()
            if verdict == "accept"
        ]

    def totals(self) -> float:
        return math.fsum(self.episode.accepted_prices().values())


def evaluate_offer(coord: Coordinator, offer: Mapping[str, float]) -> dict[str, str]:
    """Per-issue ``"accept"`` or ``"counter"`` against this coordinator's bounds."""
    if not offer:
        raise ProtocolViolation("empty offer", None, Kind.OFFER)
    unknown = set(offer) - set(coord.concessions)
    if unknown:
        raise ProtocolViolation(f"offer names unknown issues {sorted(unknown)}", None, Kind.OFFER)
    return {issue: "accept" if coord.accepts(issue, price) else "counter" for issue, price in sorted(offer.items())}


def negotiate_round(coord: Coordinator) -> list[NegotiationMessage]:
    """This coordinator's priced move for the current round.

    The first move quotes the opening utilities.  Later moves re-derive the
    penalty from the still-open issues and rounds remaining, concede every
    open issue by it, and quote the new values.  Sealed issues are left out.
    With nothing open, the move is a FINALIZE intent for the master to act on.
    """
    ep = coord.episode
    if ep.terminal:
        raise ProtocolViolation(f"negotiate_round on terminal episode ({ep.outcome.value})", ep.outcome.value, None)
    open_ids = ep.open_issues()
    if not open_ids:
        return [NegotiationMessage(Kind.FINALIZE, coord.owner, ep.episode_id, coord.round, {})]

    if coord.opened:
        states = [coord.concessions[i] for i in open_ids]
        try:
            lam = derive_lambda(LambdaInputs(tuple(states), coord.rounds_remaining()))
        except DomainError:
            log.warning("%s: no room to concede on %s", coord.owner, open_ids)
            lam = 0.0
        coord.lambda_current = lam
        step = decay_utility if coord.kind == "seller" else raise_utility
        for s in states:
            coord.concessions[s.issue_id] = s.moved_to(step(s, lam, coord.round))

    responding = any(ep.issue_sessions[i].last_offer_sender not in (None, coord.owner) for i in open_ids)
    kind = Kind.COUNTER_OFFER if responding else Kind.OFFER
    coord.opened = True
    prices = {i: coord.concessions[i].u_current for i in sorted(open_ids)}
    return [NegotiationMessage(kind, coord.owner, ep.episode_id, coord.round, {"prices": prices})]


class MasterCoordinator:
    """Owns the coordinators of one agent and makes the single finalize decision."""

    def __init__(self, agent_id: str, kind: str):
        self.agent_id = agent_id
        self.kind = kind
        self.coordinators: dict[str, Coordinator] = {}
        self.decided = False
        self.chosen: str | None = None
        self._clock = itertools.count().__next__

    def connect(self, counterpart: str, episode: EpisodeState, valuations: Mapping[str, IssueValuation]
                ) -> Coordinator:
        if counterpart in self.coordinators:
            raise ProtocolViolation(f"{self.agent_id} already negotiating with {counterpart}")
        coord = Coordinator(self.agent_id, self.kind, counterpart, episode, valuations, clock=self._clock)
        self.coordinators[counterpart] = coord
        return coord

    def fully_accepted(self) -> list[Coordinator]:
        return [
            c for c in self.coordinators.values()
            if not c.episode.terminal and c.episode.fully_accepted()
        ]

    def ready(self) -> bool:
        """Every coordinator has either ended or sealed all issues, and at least one sealed."""
        if self.decided or not self.coordinators:
            return False
        settled = all(c.episode.terminal or c.episode.fully_accepted() for c in self.coordinators.values())
        return settled and bool(self.fully_accepted())

    def done(self) -> bool:
        return bool(self.coordinators) and all(c.episode.terminal for c in self.coordinators.values())


def select_and_finalize(mc: MasterCoordinator) -> tuple[str, list[NegotiationMessage]]:
    """Pick the best fully accepted counterpart and release the rest.

    Buyers take the lowest total, sellers the highest; ties go to whichever
    coordinator sealed all its issues first, then to the smaller counterpart
    id.  Returns the chosen counterpart and the FINALIZE / DECLINE / WITHDRAW
    messages to send.
    """
    if mc.decided:
        raise ProtocolViolation(f"{mc.agent_id} has already finalized")
    candidates = mc.fully_accepted()
    if not candidates:
        raise ProtocolViolation(f"{mc.agent_id} has no fully accepted counterpart", None, Kind.FINALIZE)
    sign = 1.0 if mc.kind == "buyer" else -1.0
    chosen = min(candidates, key=lambda c: (sign * c.totals(), c.accepted_at, c.counterpart))

    out = []
    for counterpart in sorted(mc.coordinators):
        c = mc.coordinators[counterpart]
        ep = c.episode
        if ep.terminal:
            continue
        r = ep.rounds_used + 1
        if c is chosen:
            out.append(NegotiationMessage(Kind.FINALIZE, mc.agent_id, ep.episode_id, r, {}))
            continue
        held = sorted(k for k, s in ep.issue_sessions.items() if s.status is Status.TEMP_ACCEPTED)
        if held:
            out.append(NegotiationMessage(Kind.DECLINE, mc.agent_id, ep.episode_id, r, {"issues": held}))
        else:
            out.append(NegotiationMessage(Kind.WITHDRAW, mc.agent_id, ep.episode_id, r, {}))
    mc.decided = True
    mc.chosen = chosen.counterpart
    return chosen.counterpart, out


class Agent:
    """A configured buyer or seller with its master coordinator."""

    def __init__(self, config: AgentConfig):
        self.config = config
        self.master = MasterCoordinator(config.agent_id, config.kind)
        self.valuations: dict[str, IssueValuation] | None = dict(config.valuations) or None

    @property
    def agent_id(self) -> str:
        return self.config.agent_id

    @property
    def kind(self) -> str:
        return self.config.kind

    def ensure_valuations(self, published_nfa: Mapping | None = None) -> dict[str, IssueValuation]:
        if self.valuations is None:
            self.valuations = bootstrap_buyer(self.config, published_nfa)
        return self.valuations

    def advertised_nfa(self) -> dict[str, dict[str, float]]:
        if self.kind != "seller" or not self.config.publish_nfa:
            return {}
        return {k: v.nfa.as_dict() for k, v in sorted(self.config.valuations.items()) if len(v.nfa)}

    def connect(self, msg: NegotiationMessage, published_nfa: Mapping | None = None) -> Coordinator:
        """Create the coordinator announced by a CONNECT_THREAD handshake."""
        episode = P.open_episode(msg)
        others = sorted(episode.participants - {self.agent_id})
        if self.agent_id not in episode.participants or len(others) != 1:
            raise ProtocolViolation(f"{self.agent_id} cannot join episode {episode.episode_id}")
        return self.master.connect(others[0], episode, self.ensure_valuations(published_nfa))

    def summary(self) -> dict:
        vals = self.valuations or {}
        out = valuation_summary(self.agent_id, self.kind, vals) if vals else {
            "agent_id": self.agent_id, "kind": self.kind}
        out["chosen"] = self.master.chosen
        return out


def agreed(coords: Iterable[Coordinator]) -> list[Coordinator]:
    return [c for c in coords if c.episode.outcome is Outcome.AGREED]
