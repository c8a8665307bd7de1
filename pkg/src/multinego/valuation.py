"""Issue trees, utility bounds and the linear concession arithmetic.

Everything here is a pure function over immutable values.  Prices and
utilities share one axis: an agent's offered price for an issue is its
current utility value for that issue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Sequence


class DomainError(ValueError):
    """Raised when an operation is asked to compute over an invalid domain."""


@dataclass(frozen=True)
class IssueNode:
    """One node of a product's issue hierarchy; leaves are negotiable issues."""

    id: str
    name: str = ""
    children: tuple[IssueNode, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        seen: set[str] = set()
        for node in self.walk():
            if node.id in seen:
                raise DomainError(f"duplicate issue id {node.id!r}")
            seen.add(node.id)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self) -> Iterator[IssueNode]:
        yield self
        for child in self.children:
            yield from child.walk()

    def leaves(self) -> list[IssueNode]:
        return [n for n in self.walk() if n.is_leaf]

    def leaf_ids(self) -> list[str]:
        return [n.id for n in self.leaves()]

    def to_dict(self) -> dict:
        d: dict = {"id": self.id, "name": self.name}
        if self.children:
            d["children"] = [c.to_dict() for c in self.children]
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> IssueNode:
        return cls(
            id=str(data["id"]),
            name=str(data.get("name", "")),
            children=tuple(cls.from_dict(c) for c in data.get("children", ())),
        )


@dataclass(frozen=True)
class NonFunctionalAttributes:
    """Named positive multipliers (updates, scope of protection, ...)."""

    entries: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        entries = tuple((str(k), float(v)) for k, v in self.entries)
        for name, value in entries:
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"multiplier {name!r} must be a positive finite number, got {value}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def of(cls, mapping: Mapping[str, float] | None = None) -> NonFunctionalAttributes:
        return cls(tuple((mapping or {}).items()))

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)

    def product(self) -> float:
        return math.prod(v for _, v in self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class IssueValuation:
    issue_id: str
    actual_cost: float
    cost_with_margin: float
    weight: float = 1.0
    nfa: NonFunctionalAttributes = field(default_factory=NonFunctionalAttributes)

    def __post_init__(self):
        if isinstance(self.nfa, Mapping):
            object.__setattr__(self, "nfa", NonFunctionalAttributes.of(self.nfa))
        for name in ("actual_cost", "cost_with_margin", "weight"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.actual_cost < 0:
            raise DomainError("actual_cost must be >= 0")
        if self.actual_cost > self.cost_with_margin:
            raise DomainError(
                f"actual_cost {self.actual_cost} exceeds cost_with_margin {self.cost_with_margin}"
            )
        if self.weight <= 0:
            raise DomainError("weight must be > 0")

    def to_dict(self) -> dict:
        return {
            "actual_cost": self.actual_cost,
            "cost_with_margin": self.cost_with_margin,
            "weight": self.weight,
            "nfa": self.nfa.as_dict(),
        }

    @classmethod
    def from_dict(cls, issue_id: str, data: Mapping) -> IssueValuation:
        return cls(
            issue_id=issue_id,
            actual_cost=float(data["actual_cost"]),
            cost_with_margin=float(data["cost_with_margin"]),
            weight=float(data.get("weight", 1.0)),
            nfa=NonFunctionalAttributes.of(data.get("nfa")),
        )


@dataclass(frozen=True)
class UtilityBounds:
    u_min: float
    u_max: float

    def __post_init__(self):
        if not (0 <= self.u_min <= self.u_max):
            raise DomainError(f"need 0 <= u_min <= u_max, got [{self.u_min}, {self.u_max}]")

    @property
    def gap(self) -> float:
        return self.u_max - self.u_min

    def clamp(self, value: float) -> float:
        return min(max(value, self.u_min), self.u_max)


@dataclass(frozen=True)
class ConcessionState:
    issue_id: str
    u_current: float
    bounds: UtilityBounds
    weight: float

    def moved_to(self, value: float) -> ConcessionState:
        return replace(self, u_current=value)


@dataclass(frozen=True)
class LambdaInputs:
    open_issues: tuple[ConcessionState, ...]
    rounds_remaining: int

    def __post_init__(self):
        object.__setattr__(self, "open_issues", tuple(self.open_issues))
        if not self.open_issues:
            raise DomainError("no open issues")
        if self.rounds_remaining < 1:
            raise DomainError("rounds_remaining must be >= 1")


def _scale(v: IssueValuation) -> float:
    # weight multiplies in alongside the non-functional attributes
    return v.nfa.product() * v.weight


def compute_u_min(v: IssueValuation) -> float:
    """Floor utility of an issue: weighted attribute product times actual cost."""
    return _scale(v) * v.actual_cost


def compute_u_max(v: IssueValuation) -> float:
    """Ceiling utility of an issue: weighted attribute product times cost with margin."""
    return _scale(v) * v.cost_with_margin


def utility_bounds(v: IssueValuation) -> UtilityBounds:
    return UtilityBounds(compute_u_min(v), compute_u_max(v))


def min_payoff(vs: Iterable[IssueValuation]) -> float:
    vs = list(vs)
    if not vs:
        raise DomainError("no issues")
    return math.fsum(compute_u_min(v) for v in vs)


def max_payoff(vs: Iterable[IssueValuation]) -> float:
    vs = list(vs)
    if not vs:
        raise DomainError("no issues")
    return math.fsum(compute_u_max(v) for v in vs)


def seller_accepts(offered_price: float, bounds: UtilityBounds) -> bool:
    """A seller takes any offer at or above its floor."""
    return offered_price >= bounds.u_min


def buyer_accepts(asked_price: float, bounds: UtilityBounds) -> bool:
    """A buyer takes any ask at or below its ceiling."""
    return asked_price <= bounds.u_max


def decay_utility(s: ConcessionState, lam: float, t: int) -> float:
    """Seller-side step ``u * (1 - lam * t / w)``, clamped into the bounds."""
    if lam < 0:
        raise DomainError("lambda must be >= 0")
    return s.bounds.clamp(s.u_current * (1.0 - lam * t / s.weight))


def raise_utility(s: ConcessionState, lam: float, t: int) -> float:
    """Buyer-side mirror of :func:`decay_utility`: ``u * (1 + lam * t / w)``."""
    if lam < 0:
        raise DomainError("lambda must be >= 0")
    return s.bounds.clamp(s.u_current * (1.0 + lam * t / s.weight))


def derive_lambda(inp: LambdaInputs) -> float:
    """Penalty that spreads ``gap / rounds_remaining`` over the open issues.

    With this value a single step at ``t=1`` moves the summed utility of the
    open issues by exactly ``sum(u_max - u_min) / rounds_remaining``, before
    any clamping.
    """
    gap = math.fsum(s.bounds.gap for s in inp.open_issues)
    denom = math.fsum(s.u_current / s.weight for s in inp.open_issues)
    if not denom > 0:
        raise DomainError("degenerate open set")
    return (gap / inp.rounds_remaining) / denom


def valuations_from_mapping(data: Mapping[str, Mapping]) -> dict[str, IssueValuation]:
    return {k: IssueValuation.from_dict(k, v) for k, v in data.items()}


def concession_states(
    valuations: Sequence[IssueValuation] | Mapping[str, IssueValuation], start: str
) -> dict[str, ConcessionState]:
    """Initial concession state per issue, starting at ``"max"`` or ``"min"``."""
    if isinstance(valuations, Mapping):
        valuations = list(valuations.values())
    out = {}
    for v in valuations:
        b = utility_bounds(v)
        out[v.issue_id] = ConcessionState(v.issue_id, b.u_max if start == "max" else b.u_min, b, v.weight)
    return out
