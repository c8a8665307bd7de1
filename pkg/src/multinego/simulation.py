"""Scenario runner, transcripts and replay.

A run is driven by a global clock.  Each clock step is one broker tick:
arrivals register and advertise, the condition checker groups ads by
product, matched buyers and sellers are paired into episodes (newcomers join
an ongoing chain), every running episode plays one round, master
coordinators that have heard back from all counterparts finalize, and
finally the broker ages its advertisements.

The transcript holds every message line in commit order followed by one
summary line per episode and one per agent.  Summaries are always computed,
never written by hand; :func:`replay` recomputes them from the message
lines alone.
"""

from __future__ import annotations

import json
import logging
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from . import protocol as P
from .agent import Agent, AgentConfig, ConfigError, Coordinator, load_structured, negotiate_round, select_and_finalize
from .broker import AdvertisementRecord, AgentRecord, Broker, ProductRecord
from .net import InProcTransport, TcpTransport
from .protocol import Kind, NegotiationMessage, Outcome
from .valuation import DomainError, IssueNode

log = logging.getLogger(__name__)

SEED_ENV = "MULTINEGO_SEED"


class ScenarioError(ConfigError):
    pass


class TranscriptError(ValueError):
    """A transcript line could not be parsed; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno


@dataclass
class AgentEntry:
    config: AgentConfig
    arrive_tick: int = 0


@dataclass
class Scenario:
    products: dict[str, tuple[str, IssueNode]]
    agents: list[AgentEntry]
    seed: int = 0
    opener: str = "seller"
    selector: str = "buyer"
    transport: str = "inproc"
    listen: str = "127.0.0.1:0"
    max_ticks: int = 1000

    def __post_init__(self):
        if self.opener not in ("buyer", "seller"):
            raise ScenarioError(f"opener: expected buyer or seller, got {self.opener!r}")
        if self.selector not in ("buyer", "seller"):
            raise ScenarioError(f"selector: expected buyer or seller, got {self.selector!r}")
        if self.transport not in ("inproc", "tcp"):
            raise ScenarioError(f"transport: expected inproc or tcp, got {self.transport!r}")
        seen = set()
        for i, entry in enumerate(self.agents):
            cfg = entry.config
            where = f"agents[{i}]"
            if cfg.agent_id in seen:
                raise ScenarioError(f"{where}.id: duplicate agent id {cfg.agent_id!r}")
            seen.add(cfg.agent_id)
            if cfg.product_id not in self.products:
                raise ScenarioError(f"{where}.product: unknown product {cfg.product_id!r}")
            if cfg.tree.leaf_ids() != self.products[cfg.product_id][1].leaf_ids():
                raise ScenarioError(f"{where}.tree: issues differ from product {cfg.product_id!r}")
            if cfg.validity < 1:
                raise ScenarioError(f"{where}.validity: must be >= 1")
            if entry.arrive_tick < 0:
                raise ScenarioError(f"{where}.arrive_tick: must be >= 0")

    @classmethod
    def from_dict(cls, data: Mapping, base: Path | None = None) -> Scenario:
        if not isinstance(data, Mapping):
            raise ScenarioError("scenario: expected a mapping at top level")
        products = {}
        raw_products = data.get("products") or []
        if not isinstance(raw_products, list):
            raise ScenarioError("products: expected a list")
        for i, p in enumerate(raw_products):
            try:
                tree = IssueNode.from_dict(p["tree"])
                products[str(p["id"])] = (str(p.get("name", p["id"])), tree)
            except (KeyError, TypeError) as exc:
                raise ScenarioError(f"products[{i}]: missing or malformed {exc}") from None
            except DomainError as exc:
                raise ScenarioError(f"products[{i}].tree: {exc}") from None
        if not products:
            raise ScenarioError("products: at least one product is required")
        agents = []
        for i, a in enumerate(data.get("agents") or []):
            where = f"agents[{i}]"
            a = dict(a)
            if "config" in a:
                path = Path(a.pop("config"))
                if base is not None and not path.is_absolute():
                    path = base / path
                try:
                    a = {**load_structured(path), **a}
                except OSError as exc:
                    raise ScenarioError(f"{where}.config: {exc}") from None
            product = a.get("product")
            if product not in products:
                raise ScenarioError(f"{where}.product: unknown product {product!r}")
            arrive = a.pop("arrive_tick", 0)
            try:
                cfg = AgentConfig.from_dict(a, tree=products[product][1], where=where)
            except ScenarioError:
                raise
            except ConfigError as exc:
                raise ScenarioError(str(exc)) from None
            agents.append(AgentEntry(cfg, int(arrive)))
        if not agents:
            raise ScenarioError("agents: at least one agent is required")
        return cls(
            products=products,
            agents=agents,
            seed=int(data.get("seed", 0)),
            opener=data.get("opener", "seller"),
            selector=data.get("selector", "buyer"),
            transport=data.get("transport", "inproc"),
            listen=data.get("listen", "127.0.0.1:0"),
            max_ticks=int(data.get("max_ticks", 1000)),
        )

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        path = Path(path)
        try:
            data = load_structured(path)
        except (OSError, ValueError) as exc:
            raise ScenarioError(f"{path}: {exc}") from None
        return cls.from_dict(data, base=path.parent)


@dataclass
class Transcript:
    lines: list[bytes] = field(default_factory=list)
    episodes: list[dict] = field(default_factory=list)
    agents: list[dict] = field(default_factory=list)

    @property
    def outcome(self) -> str:
        if any(e["outcome"] == Outcome.AGREED.value for e in self.episodes):
            return Outcome.AGREED.value
        return Outcome.ABORTED.value

    def messages(self) -> list[NegotiationMessage]:
        return [P.decode(line) for line in self.lines]

    def to_bytes(self) -> bytes:
        out = list(self.lines)
        for e in self.episodes:
            out.append(_canon({"episode": e}))
        for a in self.agents:
            out.append(_canon({"agent": a}))
        return b"".join(out)

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> Transcript:
        t = cls()
        for lineno, raw in enumerate(data.splitlines(keepends=True), 1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except ValueError as exc:
                raise TranscriptError(lineno, f"not JSON: {exc}") from None
            if isinstance(obj, dict) and "episode" in obj and len(obj) == 1:
                t.episodes.append(obj["episode"])
            elif isinstance(obj, dict) and "agent" in obj and len(obj) == 1:
                t.agents.append(obj["agent"])
            else:
                if t.episodes or t.agents:
                    raise TranscriptError(lineno, "message line after the summaries")
                try:
                    P.decode(raw)
                except P.DecodeError as exc:
                    raise TranscriptError(lineno, f"{type(exc).__name__}: {exc}") from None
                t.lines.append(raw if raw.endswith(b"\n") else raw + b"\n")
        return t

    @classmethod
    def read(cls, path: str | Path) -> Transcript:
        return cls.from_bytes(Path(path).read_bytes())

    def agent(self, agent_id: str) -> dict:
        for a in self.agents:
            if a["agent_id"] == agent_id:
                return a
        raise KeyError(agent_id)


def _canon(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8") + b"\n"


# -- running ------------------------------------------------------------------


class _Pair:
    """One buyer-seller episode as seen by the harness."""

    def __init__(self, run: _Run, chain_id: str, episode: P.EpisodeState, buyer: Coordinator, seller: Coordinator):
        self.run = run
        self.chain_id = chain_id
        self.state = episode
        self.coords = {buyer.owner: buyer, seller.owner: seller}
        self.buyer, self.seller = buyer, seller
        if run.scenario.opener == "seller":
            self.opener, self.responder = seller, buyer
        else:
            self.opener, self.responder = buyer, seller

    @property
    def playing(self) -> bool:
        return not self.state.terminal and not self.state.fully_accepted()

    def deliver(self, msg: NegotiationMessage) -> None:
        sender = self.coords[msg.sender]
        recipient = next(c for c in self.coords.values() if c is not sender)
        line = P.encode(msg)
        got = self.run.transport.carry(sender.owner, recipient.owner, line)
        received = P.decode(got)
        self.state = P.apply(self.state, msg)
        sender.receive(msg)
        recipient.receive(received)
        self.run.commit(line)
        if msg.kind in P.PRICED:
            self.run.broker.record_offer(self.chain_id)

    def play_round(self) -> None:
        move = negotiate_round(self.opener)
        for m in move:
            self.deliver(m)
        for m in self.responder.respond(move[0]):
            self.deliver(m)
        if self.state.open_issues():
            counter = negotiate_round(self.responder)
            for m in counter:
                self.deliver(m)
            for m in self.opener.respond(counter[0]):
                self.deliver(m)
        self.state = P.tick_round(self.state)
        for c in self.coords.values():
            c.close_round()


class _Run:
    def __init__(self, scenario: Scenario, seed: int, transport):
        self.scenario = scenario
        self.rng = random.Random(seed)
        self.transport = transport
        self.broker = Broker()
        self.lines: list[bytes] = []
        self.agents: dict[str, Agent] = {}
        self.pairs: dict[str, _Pair] = {}
        self.chains: dict[str, list[_Pair]] = {}
        self.tick = 0

    def commit(self, line: bytes) -> None:
        self.lines.append(line)

    def broadcast(self, msg: NegotiationMessage) -> None:
        """Pre-episode messages go from an agent to the broker."""
        self.commit(P.encode(msg))

    def arrive(self, entry: AgentEntry) -> None:
        cfg = entry.config
        agent = Agent(cfg)
        self.agents[cfg.agent_id] = agent
        self.transport.attach(cfg.agent_id)
        ident = NegotiationMessage(Kind.SEND_IDENTITY, cfg.agent_id, None, self.tick,
                                   {"name": cfg.name, "address": cfg.address, "kind": cfg.kind})
        self.broker.register_agent(AgentRecord(cfg.agent_id, cfg.name, cfg.address, cfg.kind))
        self.broadcast(ident)
        ad_id = f"ad:{cfg.agent_id}"
        nfa = agent.advertised_nfa()
        payload = {"ad_id": ad_id, "product_id": cfg.product_id, "validity": cfg.validity}
        if nfa:
            payload["nfa"] = nfa
        self.broker.submit_advertisement(AdvertisementRecord(ad_id, cfg.product_id, cfg.agent_id, cfg.validity, nfa))
        self.broadcast(NegotiationMessage(Kind.SEND_ADVERTISEMENT, cfg.agent_id, None, self.tick, payload))

    def _available(self, agent_id: str) -> bool:
        a = self.agents[agent_id]
        return not a.master.decided and not (a.kind == self.scenario.selector and a.master.done())

    def connect(self, chain_id: str, product_id: str, buyer_id: str, seller_id: str) -> None:
        episode_id = f"{chain_id}/{buyer_id}|{seller_id}"
        if episode_id in self.pairs:
            return
        buyer, seller = self.agents[buyer_id], self.agents[seller_id]
        opener = seller if self.scenario.opener == "seller" else buyer
        tree = self.broker.issue_tree(product_id)
        msg = NegotiationMessage(Kind.CONNECT_THREAD, opener.agent_id, episode_id, 0, {
            "issues": tree.leaf_ids(),
            "participants": sorted([buyer_id, seller_id]),
            "max_rounds": min(buyer.config.max_rounds, seller.config.max_rounds),
        })
        nfa = self.broker.published_nfa(product_id)
        bc = buyer.connect(msg, nfa)
        sc = seller.connect(msg, nfa)
        self.commit(P.encode(msg))
        pair = _Pair(self, chain_id, P.open_episode(msg), bc, sc)
        self.pairs[episode_id] = pair
        self.chains[chain_id].append(pair)

    def match(self) -> None:
        for proposal in self.broker.match_advertisements():
            product = proposal.product_id
            chain = self.broker.ongoing_for(product)
            candidates = [a for a in proposal.agent_ids if self._available(a)]
            if chain is None:
                buyers = [a for a in candidates if self.agents[a].kind == "buyer"]
                sellers = [a for a in candidates if self.agents[a].kind == "seller"]
                if not buyers or not sellers:
                    continue
                chain_id = self.broker.open_negotiation(product, buyers + sellers)
                self.chains[chain_id] = []
                newcomers = buyers + sellers
            else:
                chain_id = chain.episode_id
                newcomers = []
                for a in candidates:
                    if a in chain.participant_agent_ids:
                        continue
                    kind = self.agents[a].kind
                    if any(self.agents[o].kind != kind and self._available(o) for o in chain.participant_agent_ids):
                        self.broker.join_ongoing(a, product)
                        newcomers.append(a)
            members = sorted(self.broker.ongoing[chain_id].participant_agent_ids)
            for new in newcomers:
                for other in members:
                    if self.agents[other].kind == self.agents[new].kind or not self._available(other):
                        continue
                    b, s = (new, other) if self.agents[new].kind == "buyer" else (other, new)
                    self.connect(chain_id, product, b, s)

    def decide(self) -> None:
        for agent_id in sorted(self.agents):
            agent = self.agents[agent_id]
            if agent.kind != self.scenario.selector or not agent.master.ready():
                continue
            chosen, msgs = select_and_finalize(agent.master)
            log.info("%s finalizes with %s", agent_id, chosen)
            for m in msgs:
                self.pairs[m.episode_id].deliver(m)

    def cleanup(self) -> None:
        for agent_id, agent in self.agents.items():
            if agent.master.done() or agent.master.decided:
                self.broker.withdraw_advertisement(f"ad:{agent_id}")
        for chain_id, pairs in list(self.chains.items()):
            if pairs and all(p.state.terminal for p in pairs):
                self.broker.close_negotiation(chain_id)
                del self.chains[chain_id]

    def step(self, arrivals: list[AgentEntry]) -> None:
        for entry in arrivals:
            self.arrive(entry)
        self.match()
        playing = [p for _, p in sorted(self.pairs.items()) if p.playing]
        self.rng.shuffle(playing)
        for pair in playing:
            pair.play_round()
        self.decide()
        self.cleanup()
        self.broker.tick()
        self.tick += 1

    def busy(self) -> bool:
        return bool(self.chains) or any(p.playing for p in self.pairs.values())


def resolve_seed(scenario: Scenario, seed: int | None = None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env:
        return int(env)
    return scenario.seed


def run(scenario: Scenario, seed: int | None = None, transport: str | None = None,
        listen: str | None = None) -> Transcript:
    """Execute a scenario and return its transcript.

    Runs with the same scenario and seed over the in-process transport give
    byte-identical transcripts.
    """
    seed = resolve_seed(scenario, seed)
    kind = transport or scenario.transport
    carrier = TcpTransport(listen or scenario.listen) if kind == "tcp" else InProcTransport()
    try:
        r = _Run(scenario, seed, carrier)
        for product_id, (name, tree) in sorted(scenario.products.items()):
            r.broker.register_product(ProductRecord(product_id, name), tree)
        schedule: dict[int, list[AgentEntry]] = {}
        for entry in scenario.agents:
            schedule.setdefault(entry.arrive_tick, []).append(entry)
        last_arrival = max(schedule)
        while r.tick < scenario.max_ticks:
            r.step(schedule.get(r.tick, []))
            if r.tick > last_arrival and not r.busy():
                break
        else:
            log.warning("stopped after max_ticks=%d with work pending", scenario.max_ticks)
    finally:
        carrier.close()
    episodes = [p.state.summary() for _, p in sorted(r.pairs.items())]
    agents = [r.agents[a].summary() for a in sorted(r.agents)]
    return Transcript(list(r.lines), episodes, agents)


# -- replay -------------------------------------------------------------------


@dataclass
class ReplayReport:
    clean: bool
    line: int | None = None
    reason: str = ""
    episodes: dict[str, dict] = field(default_factory=dict)

    def __str__(self):
        if self.clean:
            return f"clean ({len(self.episodes)} episodes)"
        return f"divergence at line {self.line}: {self.reason}"


def replay(transcript: Transcript | bytes | str | Path) -> ReplayReport:
    """Re-apply every message line and compare against the recorded summaries."""
    if isinstance(transcript, (str, Path)):
        transcript = Transcript.read(transcript)
    elif isinstance(transcript, bytes):
        transcript = Transcript.from_bytes(transcript)

    known: set[str] = set()
    episodes: dict[str, P.EpisodeState] = {}
    last_round: dict[str, int] = {}
    for lineno, line in enumerate(transcript.lines, 1):
        try:
            msg = P.decode(line)
        except P.DecodeError as exc:
            raise TranscriptError(lineno, f"{type(exc).__name__}: {exc}") from None
        try:
            if msg.kind is Kind.SEND_IDENTITY:
                if msg.sender in known:
                    return ReplayReport(False, lineno, f"agent {msg.sender!r} identified twice")
                known.add(msg.sender)
            elif msg.kind is Kind.SEND_ADVERTISEMENT:
                if msg.sender not in known:
                    return ReplayReport(False, lineno, f"advertisement from unknown agent {msg.sender!r}")
            elif msg.kind is Kind.CONNECT_THREAD:
                if msg.episode_id in episodes:
                    return ReplayReport(False, lineno, f"episode {msg.episode_id!r} opened twice")
                missing = set(msg.payload["participants"]) - known
                if missing:
                    return ReplayReport(False, lineno, f"unknown participants {sorted(missing)}")
                episodes[msg.episode_id] = P.open_episode(msg)
            else:
                if msg.episode_id not in episodes:
                    return ReplayReport(False, lineno, f"unknown episode {msg.episode_id!r}")
                episodes[msg.episode_id] = P.apply(episodes[msg.episode_id], msg)
                last_round[msg.episode_id] = msg.round
        except P.ProtocolViolation as exc:
            return ReplayReport(False, lineno, f"protocol violation: {exc}")

    for eid, ep in episodes.items():
        # the harness closes every round it plays, including the last one
        if not ep.terminal and last_round.get(eid) == ep.rounds_used + 1:
            episodes[eid] = P.tick_round(ep)

    summaries = {eid: ep.summary() for eid, ep in episodes.items()}
    base = len(transcript.lines)
    recorded = set()
    for i, rec in enumerate(transcript.episodes, 1):
        eid = rec.get("episode_id")
        if eid not in summaries:
            return ReplayReport(False, base + i, f"summary for unknown episode {eid!r}")
        if _canon(rec) != _canon(summaries[eid]):
            return ReplayReport(False, base + i, f"summary of {eid!r} differs from replayed state")
        recorded.add(eid)
    unrecorded = set(summaries) - recorded
    if unrecorded:
        return ReplayReport(False, base + len(transcript.episodes) + 1,
                            f"no summary for episodes {sorted(unrecorded)}")
    return ReplayReport(True, episodes=summaries)
