"""Custom types for sfl_sim."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .config import RunConfig
    from .contract import SflContract
    from .coordinator import RoundCoordinator
    from .ledger import Commitment, Ledger, WalletAddress
    from .model import Dataset
    from .threat import ParticipantProfile, PartitionPlan


@dataclass
class SimulationData:
    """Everything one simulation run holds at runtime."""

    config: RunConfig
    ledger: Ledger
    contract: SflContract
    coordinator: RoundCoordinator
    profiles: list[ParticipantProfile]
    plan: PartitionPlan
    train: Dataset
    test_groups: list[Dataset]
    commitment: Commitment
    publisher: WalletAddress
    aggregator: WalletAddress
