"""
The secure federated learning smart contract.

A serialized state machine over the ledger:

    Created -> Initialized -> (Accepting -> Evaluating -> Aggregated)* -> Finalized

Every state-mutating call validates its phase, checks gas, mutates and then
emits exactly one transaction (``init`` emits Deploy and Init). The call and
its arguments are kept as an event so the contract can be rebuilt by
replaying the log.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from ._compat import StrEnum
from typing import TYPE_CHECKING, Any

import numpy as np

from .codec import digest
from .const import (
    DEFAULT_CONVERGENCE_TOL,
    DEFAULT_CONVERGENCE_WINDOW,
    GAS_AGGREGATE_BASE,
    GAS_ANNOUNCE,
    GAS_DEPLOY,
    GAS_DISCLOSE,
    GAS_EVALUATE_PER_SUBMISSION,
    GAS_FINALIZE,
    GAS_INIT,
    GAS_PARAMETERS_PER_UNIT,
    GAS_POST,
    GAS_REPORT,
    GAS_SUBMIT_BASE,
)
from .exceptions import (
    DimensionMismatchError,
    DuplicateSubmissionError,
    EmptyDatasetError,
    GasExhaustedError,
    InvalidPhaseError,
    LedgerVerificationError,
    NoSubmissionsError,
    SpecificationError,
    SubmissionRejectedError,
    UnknownSenderError,
)
from .ledger import (
    Commitment,
    Escrow,
    Ledger,
    Receipt,
    Transaction,
    TxKind,
    WalletAddress,
    verify_commitment,
)
from .model import (
    Dataset,
    GlobalModel,
    apply_update,
    evaluate_accuracy,
    federated_average,
    has_converged,
)

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from .privacy import PerturbedUpdate, PrivacyParams

_LOGGER = logging.getLogger(__name__)


class Phase(StrEnum):
    """Contract phases."""

    CREATED = "Created"
    INITIALIZED = "Initialized"
    ACCEPTING = "Accepting"
    EVALUATING = "Evaluating"
    AGGREGATED = "Aggregated"
    FINALIZED = "Finalized"


@dataclass(frozen=True, eq=False)
class TaskSpec:
    """The FL task a publisher deploys."""

    initial_model: GlobalModel
    commitment: Commitment
    threshold: float
    reward_total: int
    max_rounds: int
    privacy: PrivacyParams
    miner_count: int
    local_evaluation: bool = False
    convergence_window: int = DEFAULT_CONVERGENCE_WINDOW
    convergence_tol: float = DEFAULT_CONVERGENCE_TOL

    def __post_init__(self) -> None:
        """Validate ranges."""
        _check_threshold(self.threshold)
        if self.reward_total <= 0:
            msg = f"reward_total must be positive, got {self.reward_total}"
            raise SpecificationError(msg)
        if self.max_rounds < 1:
            msg = f"max_rounds must be at least 1, got {self.max_rounds}"
            raise SpecificationError(msg)
        if self.miner_count < 1:
            msg = f"miner_count must be at least 1, got {self.miner_count}"
            raise SpecificationError(msg)
        if self.initial_model.round != 0:
            msg = "The initial model must be at round 0"
            raise SpecificationError(msg)


def _check_threshold(threshold: float) -> None:
    if not 0.0 <= threshold <= 1.0:
        msg = f"threshold must lie in [0, 1], got {threshold}"
        raise SpecificationError(msg)


@dataclass
class SubmissionRecord:
    """One device's submission in one round and how the miners judged it."""

    update: PerturbedUpdate
    payee: WalletAddress
    threshold: float
    local_score: float | None = None
    miner_scores: list[float] = field(default_factory=list)
    quality: float | None = None
    accepted: bool = False


@dataclass(frozen=True)
class PayoutReport:
    """How the escrow was split at finalization."""

    share: int
    pairs: tuple[tuple[int, str], ...]
    payouts: tuple[tuple[str, WalletAddress, int], ...]
    refund: int

    @property
    def total_paid(self) -> int:
        """Tokens paid to devices."""
        return sum(amount for _, _, amount in self.payouts)


@dataclass
class ContractState:
    """Everything the contract stores."""

    phase: Phase = Phase.CREATED
    task: TaskSpec | None = None
    escrow: Escrow | None = None
    current_global: GlobalModel | None = None
    announced_threshold: float = 0.0
    submissions: dict[str, SubmissionRecord] = field(default_factory=dict)
    qualified: set[str] = field(default_factory=set)
    round: int = 0
    accuracy_history: list[float] = field(default_factory=list)
    disclosed_groups: list[Dataset] | None = None
    evaluated: bool = False
    local_evaluation_active: bool = False
    finalization_eligible: bool = False
    submission_history: list[dict[str, SubmissionRecord]] = field(default_factory=list)
    qualified_pairs: list[tuple[int, str, WalletAddress]] = field(default_factory=list)
    payout_report: PayoutReport | None = None
    summary: dict[str, Any] | None = None


@dataclass(frozen=True)
class ContractEvent:
    """A committed call: the transaction, the call that produced it, and its payload."""

    tx: Transaction
    call: str
    args: dict[str, Any]
    payload: Any


def submit_gas(dim: int) -> int:
    """Gas of a Submit transaction for a ``dim``-parameter update."""
    return GAS_SUBMIT_BASE + dim // GAS_PARAMETERS_PER_UNIT


def aggregate_gas(dim: int) -> int:
    """Gas of an Aggregate transaction for a ``dim``-parameter model."""
    return GAS_AGGREGATE_BASE + dim // GAS_PARAMETERS_PER_UNIT


def local_evaluate(update: PerturbedUpdate, global_model: GlobalModel, data: Dataset) -> float:
    """
    Gas-free accuracy of the candidate model w_t + update on the caller's data.

    Devices use it to decide whether a submission would clear the announced
    threshold.
    """
    if update.dim != global_model.spec.parameter_count:
        msg = f"Update has {update.dim} parameters, model has {global_model.spec.parameter_count}"
        raise DimensionMismatchError(msg)
    return evaluate_accuracy(global_model.params + update.values, global_model.spec, data)


def miner_shards(groups: Sequence[Dataset], miner_count: int) -> list[Dataset]:
    """
    Split evaluation data between miners.

    With at least as many groups as miners, miner j gets groups j, j+M, ...
    Otherwise the pooled rows are dealt round-robin.
    """
    if not groups:
        msg = "No evaluation data"
        raise EmptyDatasetError(msg)
    if len(groups) >= miner_count:
        return [Dataset.concat(list(groups[j::miner_count])) for j in range(miner_count)]
    pooled = Dataset.concat(list(groups))
    if len(pooled) < miner_count:
        return [pooled] * miner_count
    rows = np.arange(len(pooled))
    return [pooled.subset(rows[j::miner_count]) for j in range(miner_count)]


class SflContract:
    """Contract functions called by the publisher, the aggregator and the devices."""

    def __init__(
        self,
        ledger: Ledger,
        publisher: WalletAddress,
        aggregator: WalletAddress,
        fallback_data: Dataset | None = None,
    ) -> None:
        """Create the contract in the Created phase."""
        self.ledger = ledger
        self.publisher = publisher
        self.aggregator = aggregator
        self.fallback_data = fallback_data
        self.state = ContractState()
        self.events: list[ContractEvent] = []

    # helpers

    @property
    def phase(self) -> Phase:
        """Current phase."""
        return self.state.phase

    def _require_phase(self, operation: str, *phases: Phase) -> None:
        if self.state.phase not in phases:
            allowed = ", ".join(phases)
            msg = f"{operation} is not allowed in phase {self.state.phase} (needs {allowed})"
            raise InvalidPhaseError(msg)

    def _task(self) -> TaskSpec:
        if self.state.task is None:
            msg = "The contract has not been initialized"
            raise InvalidPhaseError(msg)
        return self.state.task

    def _model(self) -> GlobalModel:
        if self.state.current_global is None:
            msg = "The contract has not been initialized"
            raise InvalidPhaseError(msg)
        return self.state.current_global

    def _require_sender(self, sender: WalletAddress) -> None:
        if not self.ledger.is_registered(sender):
            msg = f"Unknown sender {sender}"
            raise UnknownSenderError(msg)

    def _emit(
        self,
        kind: TxKind,
        sender: WalletAddress,
        gas: int,
        call: str,
        args: dict[str, Any],
        payload: Any,
        round_number: int | None = None,
    ) -> Receipt:
        tx = Transaction(
            kind=kind,
            sender=sender,
            payload_hash=digest(payload),
            gas_used=gas,
            round=self.state.round if round_number is None else round_number,
        )
        receipt = self.ledger.submit_tx(tx)
        if not receipt.accepted:
            raise GasExhaustedError(receipt.reason)
        self.events.append(ContractEvent(tx=tx, call=call, args=args, payload=payload))
        return receipt

    def _evaluation_groups(self, evaluation_data: Dataset | None) -> list[Dataset]:
        if evaluation_data is not None:
            return [evaluation_data]
        if self.state.disclosed_groups is not None:
            return self.state.disclosed_groups
        if self.fallback_data is None:
            msg = "Test data was not disclosed and no fallback dataset is configured"
            raise EmptyDatasetError(msg)
        _LOGGER.warning(
            "Round %s: test data not disclosed, evaluating on the aggregator's training data",
            self.state.round,
        )
        return [self.fallback_data]

    def _close_round(self) -> None:
        self.state.submissions = {}
        self.state.qualified = set()
        self.state.disclosed_groups = None
        self.state.evaluated = False

    # initialization phase

    def init(self, task: TaskSpec) -> ContractState:
        """Deploy the task, fund the escrow and hand out the initial model."""
        self._require_phase("init", Phase.CREATED)
        self._require_sender(self.publisher)
        self._require_sender(self.aggregator)
        self.ledger.check_gas(GAS_DEPLOY)
        self.ledger.check_gas(GAS_INIT)
        escrow = self.ledger.deposit_escrow(self.publisher, task.reward_total)

        self.state.task = task
        self.state.escrow = escrow
        self.state.current_global = task.initial_model
        self.state.announced_threshold = task.threshold
        self.state.round = 0
        self.state.phase = Phase.INITIALIZED

        self._emit(TxKind.DEPLOY, self.publisher, GAS_DEPLOY, "init", {"task": task}, task)
        self._emit(
            TxKind.INIT,
            self.aggregator,
            GAS_INIT,
            "init",
            {},
            {
                "escrow_id": escrow.escrow_id,
                "reward_total": task.reward_total,
                "commitment": task.commitment,
            },
        )
        _LOGGER.info(
            "Contract initialized: %s rounds, threshold %.4f, reward %s",
            task.max_rounds,
            task.threshold,
            task.reward_total,
        )
        return self.state

    def get_global_model(self) -> GlobalModel:
        """Return the current global model."""
        if self.state.phase is Phase.CREATED:
            msg = "get_global_model is not allowed before init"
            raise InvalidPhaseError(msg)
        return self._model()

    def get_fl_task(self) -> TaskSpec:
        """Return the task specification."""
        if self.state.phase is Phase.CREATED:
            msg = "get_fl_task is not allowed before init"
            raise InvalidPhaseError(msg)
        return self._task()

    @property
    def announced_threshold(self) -> float:
        """The accuracy a submission must reach this round."""
        return self.state.announced_threshold

    # aggregation phase

    def open_round(self, threshold: float | None = None) -> Receipt:
        """Open intake for the round and announce the threshold in real time."""
        if self.state.phase is Phase.ACCEPTING and self.state.submissions:
            msg = "The threshold cannot change once submissions have arrived"
            raise InvalidPhaseError(msg)
        self._require_phase("open_round", Phase.INITIALIZED, Phase.ACCEPTING)
        value = self.state.announced_threshold if threshold is None else float(threshold)
        _check_threshold(value)
        self.ledger.check_gas(GAS_ANNOUNCE)

        self.state.announced_threshold = value
        self.state.phase = Phase.ACCEPTING
        _LOGGER.debug("Round %s open, threshold %.4f", self.state.round, value)
        return self._emit(
            TxKind.ANNOUNCE,
            self.publisher,
            GAS_ANNOUNCE,
            "open_round",
            {"threshold": threshold},
            {"round": self.state.round, "threshold": value},
        )

    def submit_model_update(
        self,
        device_id: str,
        update: PerturbedUpdate,
        payee: WalletAddress,
        local_score: float | None = None,
    ) -> Receipt:
        """Accept a perturbed update and the payee address from a device."""
        self._require_phase("submit_model_update", Phase.ACCEPTING)
        if device_id in self.state.submissions:
            msg = f"{device_id} already submitted in round {self.state.round}"
            raise DuplicateSubmissionError(msg)
        dim = self._model().spec.parameter_count
        if update.dim != dim:
            msg = f"Update from {device_id} has {update.dim} parameters, model has {dim}"
            raise DimensionMismatchError(msg)
        self._require_sender(payee)
        threshold = self.state.announced_threshold
        if self.state.local_evaluation_active and (
            local_score is None or local_score < threshold
        ):
            msg = f"{device_id} has no local score reaching {threshold:.4f}"
            raise SubmissionRejectedError(msg)
        gas = submit_gas(dim)
        self.ledger.check_gas(gas)

        self.state.submissions[device_id] = SubmissionRecord(
            update=update,
            payee=payee,
            threshold=threshold,
            local_score=local_score,
        )
        return self._emit(
            TxKind.SUBMIT,
            payee,
            gas,
            "submit_model_update",
            {
                "device_id": device_id,
                "update": update,
                "payee": payee,
                "local_score": local_score,
            },
            {
                "device_id": device_id,
                "update": update.values,
                "payee": payee.raw,
                "local_score": local_score,
            },
        )

    def disclosure_test_data(self, groups: Sequence[Dataset]) -> bool:
        """
        Close intake and reveal the test groups to the miners.

        Returns whether the groups match the commitment; on a mismatch the
        evaluation falls back to the aggregator's training data.
        """
        self._require_phase("disclosure_test_data", Phase.ACCEPTING, Phase.EVALUATING)
        if self.state.evaluated:
            msg = f"Round {self.state.round} has already been evaluated"
            raise InvalidPhaseError(msg)
        self.ledger.check_gas(GAS_DISCLOSE)

        verified = verify_commitment(groups, self._task().commitment)
        if verified:
            self.state.disclosed_groups = list(groups)
        else:
            self.state.disclosed_groups = None
            _LOGGER.warning(
                "Round %s: disclosed test data does not match the commitment",
                self.state.round,
            )
        self.state.phase = Phase.EVALUATING
        self._emit(
            TxKind.DISCLOSE,
            self.aggregator,
            GAS_DISCLOSE,
            "disclosure_test_data",
            {"groups": list(groups)},
            {"verified": verified, "groups": list(groups)},
        )
        return verified

    def evaluate_local_model(self, evaluation_data: Dataset | None = None) -> ContractState:
        """Have every miner score every submission and select the qualified devices."""
        self._require_phase("evaluate_local_model", Phase.ACCEPTING, Phase.EVALUATING)
        if self.state.evaluated:
            msg = f"Round {self.state.round} has already been evaluated"
            raise InvalidPhaseError(msg)
        if not self.state.submissions:
            msg = f"Round {self.state.round} has no submissions to evaluate"
            raise NoSubmissionsError(msg)
        task = self._task()
        model = self._model()

        local_mode = self.state.local_evaluation_active
        gas = GAS_EVALUATE_PER_SUBMISSION * len(self.state.submissions)
        if not local_mode and gas > self.ledger.gas_limit:
            if not task.local_evaluation:
                msg = (
                    f"Evaluating {len(self.state.submissions)} submissions needs {gas} gas, "
                    f"block limit is {self.ledger.gas_limit}"
                )
                raise GasExhaustedError(msg)
            local_mode = True
            _LOGGER.warning(
                "Round %s: on-chain evaluation needs %s gas over the block limit %s, "
                "switching to local evaluation",
                self.state.round,
                gas,
                self.ledger.gas_limit,
            )
        if local_mode:
            gas = 0
            shards: list[Dataset] = []
        else:
            self.ledger.check_gas(gas)
            shards = miner_shards(self._evaluation_groups(evaluation_data), task.miner_count)

        self.state.local_evaluation_active = local_mode
        outcome: dict[str, tuple[list[float], float, bool]] = {}
        for device_id in sorted(self.state.submissions):
            record = self.state.submissions[device_id]
            if local_mode:
                record.miner_scores = [] if record.local_score is None else [record.local_score]
            else:
                candidate = model.params + record.update.values
                record.miner_scores = [
                    evaluate_accuracy(candidate, model.spec, shard) for shard in shards
                ]
            record.quality = (
                sum(record.miner_scores) / len(record.miner_scores)
                if record.miner_scores
                else 0.0
            )
            record.accepted = bool(record.miner_scores) and record.quality >= record.threshold
            outcome[device_id] = (record.miner_scores, record.quality, record.accepted)
        self.state.qualified = {
            device_id for device_id, record in self.state.submissions.items() if record.accepted
        }
        self.state.evaluated = True
        self.state.phase = Phase.EVALUATING
        _LOGGER.debug(
            "Round %s: %s of %s submissions qualified",
            self.state.round,
            len(self.state.qualified),
            len(self.state.submissions),
        )
        self._emit(
            TxKind.EVALUATE,
            self.aggregator,
            gas,
            "evaluate_local_model",
            {"evaluation_data": evaluation_data},
            {"local_mode": local_mode, "outcome": outcome},
        )
        return self.state

    def aggregate_model_update(self) -> ContractState:
        """Average the qualified updates into the next global model."""
        empty_round = not self.state.submissions
        if empty_round:
            self._require_phase(
                "aggregate_model_update", Phase.ACCEPTING, Phase.EVALUATING
            )
        else:
            self._require_phase("aggregate_model_update", Phase.EVALUATING)
            if not self.state.evaluated:
                msg = "aggregate_model_update needs evaluate_local_model first"
                raise InvalidPhaseError(msg)
        model = self._model()
        gas = aggregate_gas(model.spec.parameter_count)
        self.ledger.check_gas(gas)

        qualified = sorted(self.state.qualified)
        if qualified:
            average = federated_average(
                [self.state.submissions[device_id].update.values for device_id in qualified]
            )
            new_model = apply_update(model, average)
        else:
            new_model = GlobalModel(params=model.params, round=model.round + 1, spec=model.spec)

        aggregated_round = self.state.round
        self.state.qualified_pairs.extend(
            (aggregated_round, device_id, self.state.submissions[device_id].payee)
            for device_id in qualified
        )
        self.state.submission_history.append(dict(self.state.submissions))
        self.state.current_global = new_model
        self.state.round = new_model.round
        self.state.phase = Phase.AGGREGATED
        self._emit(
            TxKind.AGGREGATE,
            self.aggregator,
            gas,
            "aggregate_model_update",
            {},
            {"round": aggregated_round, "qualified": qualified, "params": new_model.params},
            round_number=aggregated_round,
        )
        return self.state

    def evaluate_model(self, evaluation_data: Dataset | None = None) -> float:
        """Score the new global model and report it to the publisher."""
        self._require_phase("evaluate_model", Phase.AGGREGATED)
        if len(self.state.accuracy_history) >= self.state.round:
            msg = f"Round {self.state.round} has already been reported"
            raise InvalidPhaseError(msg)
        task = self._task()
        model = self._model()
        self.ledger.check_gas(GAS_REPORT)
        data = Dataset.concat(self._evaluation_groups(evaluation_data))

        accuracy = evaluate_accuracy(model.params, model.spec, data)
        self.state.accuracy_history.append(accuracy)
        eligible = self.state.round >= task.max_rounds or has_converged(
            self.state.accuracy_history, task.convergence_window, task.convergence_tol
        )
        self._emit(
            TxKind.REPORT,
            self.aggregator,
            GAS_REPORT,
            "evaluate_model",
            {"evaluation_data": evaluation_data},
            {"round": self.state.round, "accuracy": accuracy},
        )
        self._close_round()
        if eligible:
            self.state.finalization_eligible = True
            _LOGGER.info(
                "Round %s: accuracy %.4f, contract eligible for finalization",
                self.state.round,
                accuracy,
            )
        else:
            self.state.phase = Phase.ACCEPTING
            _LOGGER.info("Round %s: accuracy %.4f", self.state.round, accuracy)
        return accuracy

    # update phase

    def finalize_contract(self) -> PayoutReport:
        """Split the escrow equally over qualified (device, round) pairs."""
        if self.state.phase is Phase.FINALIZED:
            msg = "The contract is already finalized"
            raise InvalidPhaseError(msg)
        self._require_phase("finalize_contract", Phase.AGGREGATED)
        if not self.state.finalization_eligible:
            msg = "The contract is not eligible for finalization yet"
            raise InvalidPhaseError(msg)
        task = self._task()
        escrow = self.state.escrow
        if escrow is None:
            msg = "The contract has no escrow"
            raise InvalidPhaseError(msg)
        self.ledger.check_gas(GAS_FINALIZE)

        pairs = self.state.qualified_pairs
        share = task.reward_total // len(pairs) if pairs else 0
        owed: Counter[tuple[str, WalletAddress]] = Counter(
            (device_id, payee) for _, device_id, payee in pairs
        )
        payouts = []
        for (device_id, payee), count in sorted(owed.items()):
            self.ledger.payout(escrow, payee, share * count)
            payouts.append((device_id, payee, share * count))
        refund = self.ledger.refund(escrow)

        report = PayoutReport(
            share=share,
            pairs=tuple((round_number, device_id) for round_number, device_id, _ in pairs),
            payouts=tuple(payouts),
            refund=refund,
        )
        self.state.payout_report = report
        self.state.phase = Phase.FINALIZED
        self._emit(TxKind.FINALIZE, self.aggregator, GAS_FINALIZE, "finalize_contract", {}, report)
        _LOGGER.info(
            "Contract finalized: %s tokens to %s devices, %s refunded",
            report.total_paid,
            len(payouts),
            refund,
        )
        return report

    def post_evaluation(self) -> dict[str, Any]:
        """Publish the results of the task, once."""
        self._require_phase("post_evaluation", Phase.FINALIZED)
        if self.state.summary is not None:
            msg = "Results have already been posted"
            raise InvalidPhaseError(msg)
        self.ledger.check_gas(GAS_POST)
        report = self.state.payout_report
        model = self._model()
        history = self.state.accuracy_history
        summary: dict[str, Any] = {
            "final_accuracy": history[-1] if history else None,
            "rounds": self.state.round,
            "accuracy_history": list(history),
            "submissions": [len(round_subs) for round_subs in self.state.submission_history],
            "qualified_counts": [
                sum(record.accepted for record in round_subs.values())
                for round_subs in self.state.submission_history
            ],
            "local_evaluation": self.state.local_evaluation_active,
            "share": report.share if report else 0,
            "payouts": {
                device_id: amount for device_id, _, amount in (report.payouts if report else ())
            },
            "refund": report.refund if report else 0,
            "final_model_hash": digest(model.params).hex(),
        }
        self.state.summary = summary
        self._emit(TxKind.POST, self.aggregator, GAS_POST, "post_evaluation", {}, summary)
        return summary

    # event sourcing

    def state_digest(self) -> bytes:
        """Digest of the durable contract state, used to compare replays."""
        state = self.state
        return digest(
            {
                "phase": state.phase.value,
                "round": state.round,
                "params": self._model().params if state.current_global else None,
                "threshold": state.announced_threshold,
                "accuracy_history": list(state.accuracy_history),
                "qualified_pairs": [
                    (round_number, device_id, payee.raw)
                    for round_number, device_id, payee in state.qualified_pairs
                ],
                "submissions": [
                    {
                        device_id: (record.miner_scores, record.quality, record.accepted)
                        for device_id, record in round_subs.items()
                    }
                    for round_subs in state.submission_history
                ],
                "local_evaluation": state.local_evaluation_active,
                "eligible": state.finalization_eligible,
                "payouts": state.payout_report,
                "summary": state.summary,
            }
        )


def replay_events(
    events: Sequence[ContractEvent],
    gas_limit: int,
    fallback_data: Dataset | None = None,
) -> SflContract:
    """
    Rebuild a contract by re-running every recorded call on a fresh ledger.

    Wallets are registered as they first appear; the publisher is funded with
    exactly the reward. Raises LedgerVerificationError if a replayed call
    produces a different transaction than the one recorded.
    """
    if len(events) < 2 or events[0].tx.kind is not TxKind.DEPLOY:  # noqa: PLR2004
        msg = "An event log starts with Deploy and Init"
        raise LedgerVerificationError(msg)
    task: TaskSpec = events[0].args["task"]
    ledger = Ledger(gas_limit=gas_limit)
    publisher = events[0].tx.sender
    aggregator = events[1].tx.sender
    ledger.register_wallet(publisher, task.reward_total)
    if aggregator != publisher:
        ledger.register_wallet(aggregator)
    contract = SflContract(ledger, publisher, aggregator, fallback_data)

    for event in events:
        if event.tx.kind is TxKind.INIT:
            continue
        if event.tx.kind is TxKind.SUBMIT and not ledger.is_registered(event.args["payee"]):
            ledger.register_wallet(event.args["payee"])
        before = len(contract.events)
        getattr(contract, event.call)(**event.args)
        replayed = contract.events[before:]
        recorded = event.tx.tx_hash
        if not any(item.tx.tx_hash == recorded for item in replayed):
            msg = f"Replaying {event.call} did not reproduce transaction {recorded.hex()}"
            raise LedgerVerificationError(msg)
    return contract


# legal transaction kinds per replay state
_ORDER: dict[str, dict[TxKind, str]] = {
    "created": {TxKind.DEPLOY: "deployed"},
    "deployed": {TxKind.INIT: "initialized"},
    "initialized": {TxKind.ANNOUNCE: "open"},
    "open": {
        TxKind.ANNOUNCE: "open",
        TxKind.SUBMIT: "receiving",
        TxKind.DISCLOSE: "evaluating-empty",
        TxKind.AGGREGATE: "aggregated",
    },
    "receiving": {
        TxKind.SUBMIT: "receiving",
        TxKind.DISCLOSE: "evaluating",
        TxKind.EVALUATE: "evaluated",
    },
    "evaluating-empty": {TxKind.DISCLOSE: "evaluating-empty", TxKind.AGGREGATE: "aggregated"},
    "evaluating": {TxKind.DISCLOSE: "evaluating", TxKind.EVALUATE: "evaluated"},
    "evaluated": {TxKind.AGGREGATE: "aggregated"},
    "aggregated": {TxKind.REPORT: "reported"},
    "reported": {
        TxKind.ANNOUNCE: "open",
        TxKind.SUBMIT: "receiving",
        TxKind.DISCLOSE: "evaluating-empty",
        TxKind.AGGREGATE: "aggregated",
        TxKind.FINALIZE: "finalized",
    },
    "finalized": {TxKind.POST: "posted"},
    "posted": {},
}


def check_transaction_order(kinds: Iterable[TxKind]) -> None:
    """Raise LedgerVerificationError if the kinds do not follow the contract's phases."""
    state = "created"
    for position, kind in enumerate(kinds):
        following = _ORDER[state].get(kind)
        if following is None:
            msg = f"Transaction {position} ({kind}) is not legal after {state}"
            raise LedgerVerificationError(msg)
        state = following
