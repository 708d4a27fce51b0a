"""Shared fixtures for sfl_sim tests."""

from __future__ import annotations

import numpy as np
import pytest

from sfl_sim.config import RunConfig, load_config
from sfl_sim.contract import SflContract, TaskSpec
from sfl_sim.ledger import Ledger, WalletAddress, commit_test_data
from sfl_sim.model import Dataset, GlobalModel, ModelKind, ModelSpec
from sfl_sim.privacy import PerturbedUpdate, PrivacyParams

# Two-feature, two-class toy problem. With weights GOOD the candidate model is
# always right; with -GOOD it is always wrong; the zero model predicts class 0.
TOY_SPEC = ModelSpec(kind=ModelKind.LOGISTIC, input_dim=2, class_count=2)
GOOD = np.array([1.0, -1.0, -1.0, 1.0, 0.0, 0.0])
TOY_DATA = Dataset(
    features=np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]),
    labels=np.array([0, 1, 0, 1]),
    class_count=2,
)


def toy_update(values, device_id: str = "") -> PerturbedUpdate:
    return PerturbedUpdate(values=np.asarray(values, dtype=float), was_clipped=False, device_id=device_id)


class ToyMarket:
    """A contract over the toy problem with funded wallets."""

    def __init__(
        self,
        *,
        reward: int = 100,
        threshold: float = 0.9,
        max_rounds: int = 2,
        gas_limit: int = 100_000,
        local_evaluation: bool = False,
        miner_count: int = 1,
        publisher_funds: int | None = None,
        devices: tuple[str, ...] = ("a", "b", "c", "d"),
    ) -> None:
        self.ledger = Ledger(gas_limit=gas_limit)
        self.publisher = WalletAddress.derive(1, 0, role="publisher")
        self.aggregator = WalletAddress.derive(1, 0, role="aggregator")
        self.ledger.register_wallet(self.publisher, reward if publisher_funds is None else publisher_funds)
        self.ledger.register_wallet(self.aggregator)
        self.payees = {name: WalletAddress.derive(1, index) for index, name in enumerate(devices)}
        for wallet in self.payees.values():
            self.ledger.register_wallet(wallet)
        self.groups = [TOY_DATA]
        self.task = TaskSpec(
            initial_model=GlobalModel(params=np.zeros(TOY_SPEC.parameter_count), round=0, spec=TOY_SPEC),
            commitment=commit_test_data(self.groups, b"index-seed"),
            threshold=threshold,
            reward_total=reward,
            max_rounds=max_rounds,
            privacy=PrivacyParams(sigma_override=0.0),
            miner_count=miner_count,
            local_evaluation=local_evaluation,
        )
        self.contract = SflContract(self.ledger, self.publisher, self.aggregator, fallback_data=TOY_DATA)

    def start(self) -> SflContract:
        self.contract.init(self.task)
        self.contract.open_round()
        return self.contract

    def submit(self, device: str, values, local_score: float | None = None):
        return self.contract.submit_model_update(
            device, toy_update(values, device), self.payees[device], local_score
        )

    def close_round(self) -> float:
        self.contract.disclosure_test_data(self.groups)
        if self.contract.state.submissions:
            self.contract.evaluate_local_model()
        self.contract.aggregate_model_update()
        return self.contract.evaluate_model()


@pytest.fixture
def market() -> ToyMarket:
    return ToyMarket()


@pytest.fixture
def small_data() -> Dataset:
    from sfl_sim.datasets import generate_synthetic

    return generate_synthetic(class_count=3, per_class=40, input_dim=4, separation=6.0, seed=1)


def fast_overrides(**changes) -> dict:
    values = {
        "seed": 11,
        "p": 5,
        "emd": 1.0,
        "classes": 4,
        "per_class": 50,
        "input_dim": 8,
        "separation": 6.0,
        "batch_size": 16,
        "learning_rate": 0.5,
        "sigma_override": 0.0,
        "rounds": 3,
        "miners": 2,
        "test_groups": 4,
        "workers": 2,
        "repeats": 3,
        "reward_total": 1000,
    }
    values.update(changes)
    return values


@pytest.fixture
def fast_config() -> RunConfig:
    """A small, noise-free scenario that runs in well under a second."""
    return load_config(overrides=fast_overrides())
