"""Brokered multi-party, multi-issue negotiation between buyer and seller agents."""

from .agent import (
    Agent,
    AgentConfig,
    ConfigError,
    Coordinator,
    MasterCoordinator,
    bootstrap_buyer,
    evaluate_offer,
    negotiate_round,
    select_and_finalize,
)
from .broker import (
    AdvertisementRecord,
    AgentRecord,
    AttributeRecord,
    Broker,
    BrokerError,
    MatchProposal,
    OngoingNegotiationRecord,
    ProductRecord,
)
from .protocol import (
    EpisodeState,
    IssueSessionState,
    Kind,
    NegotiationMessage,
    Outcome,
    ProtocolViolation,
    Status,
    apply,
    decode,
    encode,
    null_response,
    tick_round,
)
from .simulation import ReplayReport, Scenario, ScenarioError, Transcript, TranscriptError, replay, run
from .valuation import (
    ConcessionState,
    DomainError,
    IssueNode,
    IssueValuation,
    LambdaInputs,
    NonFunctionalAttributes,
    UtilityBounds,
    buyer_accepts,
    compute_u_max,
    compute_u_min,
    decay_utility,
    derive_lambda,
    max_payoff,
    min_payoff,
    raise_utility,
    seller_accepts,
)

__version__ = "0.1.0"

__all__ = [
    "AdvertisementRecord",
    "Agent",
    "AgentConfig",
    "AgentRecord",
    "AttributeRecord",
    "Broker",
    "BrokerError",
    "ConcessionState",
    "ConfigError",
    "Coordinator",
    "DomainError",
    "EpisodeState",
    "IssueNode",
    "IssueSessionState",
    "IssueValuation",
    "Kind",
    "LambdaInputs",
    "MasterCoordinator",
    "MatchProposal",
    "NegotiationMessage",
    "NonFunctionalAttributes",
    "OngoingNegotiationRecord",
    "Outcome",
    "ProductRecord",
    "ProtocolViolation",
    "ReplayReport",
    "Scenario",
    "ScenarioError",
    "Status",
    "Transcript",
    "TranscriptError",
    "UtilityBounds",
    "apply",
    "bootstrap_buyer",
    "buyer_accepts",
    "compute_u_max",
    "compute_u_min",
    "decay_utility",
    "decode",
    "derive_lambda",
    "encode",
    "evaluate_offer",
    "max_payoff",
    "min_payoff",
    "negotiate_round",
    "null_response",
    "raise_utility",
    "replay",
    "run",
    "select_and_finalize",
    "seller_accepts",
    "tick_round",
]
