"""Advertisement repository and condition checker.

The repository keeps five tables (agents, products, attribute trees,
advertisements, ongoing negotiations).  Advertisements carry a validity
counter measured in broker ticks; an advertisement that reaches zero without
its agent taking part in a negotiation is dropped.

All mutations go through one lock, so any client observes a single total
order of register / submit / match / tick calls.  When a snapshot path is
given, every mutation is appended to it as one JSON line and
:meth:`Broker.restore` rebuilds the state by replaying those lines.
"""

from __future__ import annotations

import itertools
import json
import logging
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .valuation import IssueNode

log = logging.getLogger(__name__)

KINDS = ("buyer", "seller")


class BrokerError(Exception):
    """A repository request was refused."""


@dataclass(frozen=True)
class AgentRecord:
    agent_id: str
    name: str
    address: str
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BrokerError(f"agent kind must be buyer or seller, got {self.kind!r}")


@dataclass(frozen=True)
class ProductRecord:
    product_id: str
    product_name: str


@dataclass(frozen=True)
class AttributeRecord:
    product_id: str
    tree: IssueNode


@dataclass(frozen=True)
class AdvertisementRecord:
    ad_id: str
    product_id: str
    agent_id: str
    validity_counter: int
    # per-issue non-functional attribute maps a seller chooses to publish
    nfa: Mapping[str, Mapping[str, float]] = field(default_factory=dict)


@dataclass
class OngoingNegotiationRecord:
    episode_id: str
    product_id: str
    participant_agent_ids: set[str]
    offers_made: int = 0


@dataclass(frozen=True)
class MatchProposal:
    product_id: str
    buyer_ads: tuple[AdvertisementRecord, ...]
    seller_ads: tuple[AdvertisementRecord, ...]
    addresses: Mapping[str, str]

    @property
    def agent_ids(self) -> list[str]:
        return [a.agent_id for a in self.buyer_ads + self.seller_ads]


class Broker:
    def __init__(self, snapshot_path: str | Path | None = None):
        self.agents: dict[str, AgentRecord] = {}
        self.products: dict[str, ProductRecord] = {}
        self.attributes: dict[str, AttributeRecord] = {}
        self.ads: dict[str, AdvertisementRecord] = {}
        self.ongoing: dict[str, OngoingNegotiationRecord] = {}
        self._lock = threading.RLock()
        self._episode_ids = itertools.count(1)
        self._snapshot = Path(snapshot_path) if snapshot_path else None
        self._replaying = False

    # -- persistence --

    def _log(self, op: str, **fields):
        if self._snapshot is None or self._replaying:
            return
        line = json.dumps({"op": op, **fields}, sort_keys=True, separators=(",", ":"))
        with self._snapshot.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    @classmethod
    def restore(cls, path: str | Path) -> Broker:
        """Rebuild a broker from an append-only snapshot file and keep appending to it."""
        broker = cls(path)
        broker._replaying = True
        try:
            with Path(path).open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    op = rec.pop("op")
                    try:
                        broker._replay_op(op, rec)
                    except (BrokerError, KeyError, TypeError) as exc:
                        raise BrokerError(f"snapshot line {lineno}: {exc}") from exc
        finally:
            broker._replaying = False
        return broker

    def _replay_op(self, op: str, rec: dict):
        if op == "register_agent":
            self.register_agent(AgentRecord(**rec))
        elif op == "register_product":
            self.register_product(ProductRecord(rec["product_id"], rec["product_name"]),
                                  IssueNode.from_dict(rec["tree"]) if rec.get("tree") else None)
        elif op == "submit_advertisement":
            self.submit_advertisement(AdvertisementRecord(**rec))
        elif op == "tick":
            self.tick()
        elif op == "open_negotiation":
            self.open_negotiation(rec["product_id"], rec["participants"], episode_id=rec["episode_id"])
        elif op == "join_ongoing":
            self.join_ongoing(rec["agent_id"], rec["product_id"])
        elif op == "record_offer":
            self.record_offer(rec["episode_id"])
        elif op == "close_negotiation":
            self.close_negotiation(rec["episode_id"])
        elif op == "withdraw_advertisement":
            self.withdraw_advertisement(rec["ad_id"])
        else:
            raise BrokerError(f"unknown snapshot op {op!r}")

    # -- agents and products --

    def register_agent(self, rec: AgentRecord) -> str:
        with self._lock:
            if rec.agent_id in self.agents:
                raise BrokerError(f"agent {rec.agent_id!r} already registered")
            self.agents[rec.agent_id] = rec
            self._log("register_agent", agent_id=rec.agent_id, name=rec.name, address=rec.address, kind=rec.kind)
            return rec.agent_id

    def lookup_agent(self, agent_id: str) -> AgentRecord:
        try:
            return self.agents[agent_id]
        except KeyError:
            raise BrokerError(f"unknown agent {agent_id!r}") from None

    def register_product(self, product: ProductRecord, tree: IssueNode | None = None) -> str:
        with self._lock:
            if product.product_id in self.products:
                raise BrokerError(f"product {product.product_id!r} already registered")
            self.products[product.product_id] = product
            if tree is not None:
                self.attributes[product.product_id] = AttributeRecord(product.product_id, tree)
            self._log("register_product", product_id=product.product_id, product_name=product.product_name,
                      tree=tree.to_dict() if tree else None)
            return product.product_id

    def issue_tree(self, product_id: str) -> IssueNode:
        try:
            return self.attributes[product_id].tree
        except KeyError:
            raise BrokerError(f"no attribute tree for product {product_id!r}") from None

    # -- advertisements --

    def submit_advertisement(self, ad: AdvertisementRecord) -> str:
        with self._lock:
            if ad.agent_id not in self.agents:
                raise BrokerError(f"unknown agent {ad.agent_id!r}")
            if ad.product_id not in self.products:
                raise BrokerError(f"unknown product {ad.product_id!r}")
            if ad.validity_counter < 1:
                raise BrokerError("validity counter must be at least 1")
            if ad.ad_id in self.ads:
                raise BrokerError(f"advertisement {ad.ad_id!r} already live")
            self.ads[ad.ad_id] = ad
            self._log("submit_advertisement", ad_id=ad.ad_id, product_id=ad.product_id, agent_id=ad.agent_id,
                      validity_counter=ad.validity_counter, nfa={k: dict(v) for k, v in ad.nfa.items()})
            return ad.ad_id

    def withdraw_advertisement(self, ad_id: str) -> None:
        with self._lock:
            if self.ads.pop(ad_id, None) is not None:
                self._log("withdraw_advertisement", ad_id=ad_id)

    def _engaged(self, ad: AdvertisementRecord) -> bool:
        return any(
            rec.product_id == ad.product_id and ad.agent_id in rec.participant_agent_ids
            for rec in self.ongoing.values()
        )

    def tick(self) -> list[str]:
        """Age every advertisement by one tick; return the ids that expired."""
        with self._lock:
            expired = []
            for ad_id, ad in list(self.ads.items()):
                counter = max(ad.validity_counter - 1, 0)
                self.ads[ad_id] = replace(ad, validity_counter=counter)
                if counter == 0 and not self._engaged(ad):
                    del self.ads[ad_id]
                    expired.append(ad_id)
            self._log("tick")
            if expired:
                log.debug("expired advertisements %s", expired)
            return expired

    def match_advertisements(self) -> list[MatchProposal]:
        """Group live ads by product; keep products with at least one buyer and one seller."""
        with self._lock:
            by_product: dict[str, dict[str, list[AdvertisementRecord]]] = {}
            for ad in sorted(self.ads.values(), key=lambda a: a.ad_id):
                kind = self.agents[ad.agent_id].kind
                by_product.setdefault(ad.product_id, {"buyer": [], "seller": []})[kind].append(ad)
            proposals = []
            for product_id in sorted(by_product):
                groups = by_product[product_id]
                if groups["buyer"] and groups["seller"]:
                    ids = [a.agent_id for a in groups["buyer"] + groups["seller"]]
                    proposals.append(MatchProposal(
                        product_id,
                        tuple(groups["buyer"]),
                        tuple(groups["seller"]),
                        {i: self.agents[i].address for i in ids},
                    ))
            return proposals

    def published_nfa(self, product_id: str) -> dict[str, dict[str, float]]:
        """Non-functional attributes published by the sellers of a product.

        Earlier advertisements win when two sellers publish the same issue.
        """
        with self._lock:
            merged: dict[str, dict[str, float]] = {}
            for ad in sorted(self.ads.values(), key=lambda a: a.ad_id):
                if ad.product_id != product_id or self.agents[ad.agent_id].kind != "seller":
                    continue
                for issue, attrs in ad.nfa.items():
                    merged.setdefault(issue, dict(attrs))
            return merged

    # -- ongoing negotiations --

    def open_negotiation(self, product_id: str, participants, episode_id: str | None = None) -> str:
        with self._lock:
            participants = set(participants)
            if len(participants) < 2:
                raise BrokerError("a negotiation needs at least two participants")
            unknown = participants - set(self.agents)
            if unknown:
                raise BrokerError(f"unknown agents {sorted(unknown)}")
            if episode_id is None:
                episode_id = f"{product_id}#{next(self._episode_ids)}"
                while episode_id in self.ongoing:
                    episode_id = f"{product_id}#{next(self._episode_ids)}"
            elif episode_id in self.ongoing:
                raise BrokerError(f"episode {episode_id!r} already open")
            self.ongoing[episode_id] = OngoingNegotiationRecord(episode_id, product_id, participants)
            self._log("open_negotiation", product_id=product_id, participants=sorted(participants),
                      episode_id=episode_id)
            return episode_id

    def ongoing_for(self, product_id: str) -> OngoingNegotiationRecord | None:
        with self._lock:
            for rec in self.ongoing.values():
                if rec.product_id == product_id:
                    return rec
            return None

    def join_ongoing(self, agent_id: str, product_id: str) -> str:
        with self._lock:
            if agent_id not in self.agents:
                raise BrokerError(f"unknown agent {agent_id!r}")
            rec = self.ongoing_for(product_id)
            if rec is None:
                raise BrokerError(f"no chain to join for product {product_id!r}")
            if agent_id not in rec.participant_agent_ids:
                rec.participant_agent_ids.add(agent_id)
                self._log("join_ongoing", agent_id=agent_id, product_id=product_id)
            return rec.episode_id

    def record_offer(self, episode_id: str) -> int:
        with self._lock:
            try:
                rec = self.ongoing[episode_id]
            except KeyError:
                raise BrokerError(f"unknown episode {episode_id!r}") from None
            rec.offers_made += 1
            self._log("record_offer", episode_id=episode_id)
            return rec.offers_made

    def close_negotiation(self, episode_id: str) -> None:
        """Drop a finished chain together with its participants' advertisements."""
        with self._lock:
            rec = self.ongoing.pop(episode_id, None)
            if rec is None:
                raise BrokerError(f"unknown episode {episode_id!r}")
            for ad_id, ad in list(self.ads.items()):
                if ad.product_id == rec.product_id and ad.agent_id in rec.participant_agent_ids:
                    del self.ads[ad_id]
            self._log("close_negotiation", episode_id=episode_id)
