"""
Experiment runner.

Builds a population from a RunConfig, drives the contract through
Initialization, Aggregation rounds and Finalization, and writes the metrics,
the ledger dump and the published summary.
"""

from __future__ import annotations

import asyncio
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

from .const import (
    DATASET_IDX,
    GRID_FILENAME,
    LEDGER_FILENAME,
    METRICS_FILENAME,
    SUMMARY_FILENAME,
)
from .contract import Phase, SflContract, TaskSpec
from .coordinator import RoundCoordinator
from .data import SimulationData
from .datasets import generate_synthetic, load_idx, split_dataset, split_groups
from .exceptions import SflError, SpecificationError
from .ledger import Ledger, WalletAddress, commit_test_data
from .metrics import RoundMetrics, write_metrics_csv, write_summary, write_table
from .model import init_global_model
from .seeding import derive_seed, make_rng
from .threat import Behavior, build_population, partition_plan

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .config import RunConfig
    from .contract import SubmissionRecord
    from .model import Dataset

_LOGGER = logging.getLogger(__name__)


@dataclass
class RunResult:
    """Outcome of one simulation run."""

    config: RunConfig
    simulation: SimulationData
    metrics: list[RoundMetrics]
    summary: dict[str, Any] | None
    final_block_hash: bytes
    out_dir: Path | None = None
    aa: AccuracyStatistics | None = None

    @property
    def finalized(self) -> bool:
        """Whether the contract reached Finalized."""
        return self.simulation.contract.phase is Phase.FINALIZED

    @property
    def final_accuracy(self) -> float | None:
        """Global accuracy after the last completed round."""
        return self.metrics[-1].global_accuracy if self.metrics else None

    @property
    def attacker_submissions(self) -> int:
        """Submissions made by malicious devices over the whole run."""
        return sum(row.attacker_submissions for row in self.metrics)

    @property
    def attackers_rejected(self) -> int:
        """Malicious submissions that failed the threshold."""
        return sum(row.attackers_rejected for row in self.metrics)

    def rewarded_devices(self) -> dict[str, int]:
        """Tokens paid per device."""
        report = self.simulation.contract.state.payout_report
        if report is None:
            return {}
        return {device_id: amount for device_id, _, amount in report.payouts}


@dataclass(frozen=True)
class AccuracyStatistics:
    """Highest, minimum and average final accuracy over repeated runs."""

    highest: float
    minimum: float
    average: float
    finals: tuple[float, ...]
    per_round: tuple[float, ...] = field(default=())
    per_round_quality: tuple[float, ...] = field(default=())

    def thresholds(self, margin: float, rounds: int) -> list[float]:
        """
        Per-round thresholds max(0, Q_t - margin), the last one repeated.

        Q_t is the mean miner score of well-behaved submissions in round t of
        the reference runs, the quantity the threshold is compared against.
        Without those scores the per-round global accuracy stands in, then
        the average final accuracy.
        """
        schedule = list(self.per_round_quality) or list(self.per_round) or [self.average]
        schedule += [schedule[-1]] * (rounds - len(schedule))
        return [max(0.0, value - margin) for value in schedule[:rounds]]

    def as_dict(self) -> dict[str, Any]:
        """JSON-ready form."""
        return {
            "ha": self.highest,
            "ma": self.minimum,
            "aa": self.average,
            "finals": list(self.finals),
            "per_round_aa": list(self.per_round),
            "per_round_quality": list(self.per_round_quality),
        }


def load_dataset(config: RunConfig) -> Dataset:
    """The configured dataset: seeded synthetic clusters or an IDX pair."""
    if config.dataset == DATASET_IDX:
        return load_idx(Path(str(config.idx_images)), Path(str(config.idx_labels)), config.classes)
    return generate_synthetic(
        config.classes,
        config.per_class,
        config.input_dim,
        config.separation,
        derive_seed(config.seed, "dataset"),
    )


def prepare_simulation(config: RunConfig, threshold: float | None = None) -> SimulationData:
    """Build data, population, wallets and ledger, then deploy and initialize the contract."""
    data = load_dataset(config)
    train, test = split_dataset(data, config.test_fraction, derive_seed(config.seed, "split"))
    index_seed = derive_seed(config.seed, "test-groups")
    test_groups = split_groups(test, min(config.test_groups, len(test)), index_seed)
    commitment = commit_test_data(test_groups, index_seed.to_bytes(8, "little"))

    profiles = build_population(
        config.population_size,
        config.mix,
        config.flip_rate,
        config.emd,
        train,
        make_rng(config.seed, "population"),
        wallet_seed=config.seed,
        rational=config.rational,
    )
    plan = partition_plan(profiles, len(train))

    ledger = Ledger(gas_limit=config.gas_limit)
    publisher = WalletAddress.derive(config.seed, 0, role="publisher")
    aggregator = WalletAddress.derive(config.seed, 0, role="aggregator")
    ledger.register_wallet(publisher, config.reward_total)
    ledger.register_wallet(aggregator)
    for profile in profiles:
        ledger.register_wallet(profile.wallet)

    contract = SflContract(ledger, publisher, aggregator, fallback_data=train)
    spec = config.model_spec(train.input_dim, train.class_count)
    contract.init(
        TaskSpec(
            initial_model=init_global_model(spec, derive_seed(config.seed, "init")),
            commitment=commitment,
            threshold=config.threshold if threshold is None else threshold,
            reward_total=config.reward_total,
            max_rounds=config.max_rounds,
            privacy=config.privacy(),
            miner_count=config.miner_count,
            local_evaluation=config.local_evaluation,
        )
    )
    ledger.mine_pending()

    coordinator = RoundCoordinator(
        contract,
        profiles,
        config.training(),
        config.privacy(),
        config.seed,
        config.workers,
    )
    return SimulationData(
        config=config,
        ledger=ledger,
        contract=contract,
        coordinator=coordinator,
        profiles=profiles,
        plan=plan,
        train=train,
        test_groups=test_groups,
        commitment=commitment,
        publisher=publisher,
        aggregator=aggregator,
    )


def _round_metrics(
    simulation: SimulationData,
    records: dict[str, SubmissionRecord],
    accuracy: float,
    gas_used: int,
    threshold: float,
    started: float,
    failed: int = 0,
) -> RoundMetrics:
    malicious = {
        profile.device_id
        for profile in simulation.profiles
        if profile.behavior is Behavior.MALICIOUS
    }
    attackers = [device_id for device_id in records if device_id in malicious]
    qualified = sum(record.accepted for record in records.values())
    qualities = [record.quality for record in records.values() if record.quality is not None]
    return RoundMetrics(
        round=simulation.contract.state.round,
        global_accuracy=accuracy,
        submissions=len(records),
        qualified_count=qualified,
        rejected_count=len(records) - qualified,
        gas_used=gas_used,
        mean_quality=sum(qualities) / len(qualities) if qualities else None,
        threshold=threshold,
        attacker_submissions=len(attackers),
        attackers_rejected=sum(not records[device_id].accepted for device_id in attackers),
        failed_devices=failed,
        wall_time_ms=(
            (time.perf_counter() - started) * 1000.0
            if simulation.config.record_timing
            else None
        ),
    )


async def async_drive_rounds(
    simulation: SimulationData,
    rows: list[RoundMetrics],
    thresholds: Sequence[float] | None = None,
) -> None:
    """Run aggregation rounds until the contract is eligible for finalization."""
    contract = simulation.contract
    config = simulation.config
    for round_index in range(config.max_rounds):
        started = time.perf_counter()
        first_event = len(contract.events)
        threshold = (
            thresholds[min(round_index, len(thresholds) - 1)]
            if thresholds
            else contract.announced_threshold
        )
        contract.open_round(threshold)

        intake = await simulation.coordinator.async_run_intake()
        _LOGGER.debug(
            "Round %s intake: %s submitted, %s withheld, %s refused, %s failed",
            round_index,
            len(intake.submitted),
            len(intake.withheld),
            len(intake.refused),
            len(intake.failed),
        )
        if config.disclose_test_data:
            contract.disclosure_test_data(simulation.test_groups)
        if contract.state.submissions:
            contract.evaluate_local_model()
        records = dict(contract.state.submissions)
        contract.aggregate_model_update()
        accuracy = contract.evaluate_model()

        gas_used = sum(event.tx.gas_used for event in contract.events[first_event:])
        simulation.ledger.mine_pending()
        rows.append(
            _round_metrics(
                simulation,
                records,
                accuracy,
                gas_used,
                threshold,
                started,
                failed=len(intake.failed),
            )
        )
        if contract.state.finalization_eligible:
            break


def _write_outputs(
    simulation: SimulationData,
    rows: Sequence[RoundMetrics],
    summary: dict[str, Any],
    out_dir: Path,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(
        out_dir / METRICS_FILENAME, rows, record_timing=simulation.config.record_timing
    )
    simulation.ledger.dump(out_dir / LEDGER_FILENAME)
    write_summary(out_dir / SUMMARY_FILENAME, summary)


def run(
    config: RunConfig,
    out_dir: Path | None = None,
    thresholds: Sequence[float] | None = None,
) -> RunResult:
    """
    Execute one run end to end.

    With ``aa_auto`` and no explicit ``thresholds`` the per-round schedule is
    computed first from attack-free reference runs. Contract and ledger
    errors abort the run; whatever was produced so far is still written to
    ``out_dir`` before the error propagates.
    """
    statistics = None
    if config.aa_auto and thresholds is None:
        statistics = compute_aa_threshold(
            config, out_dir=out_dir / "aa" if out_dir is not None else None
        )
        thresholds = statistics.thresholds(config.aa_margin, config.max_rounds)
        _LOGGER.info(
            "AA schedule: %s",
            ", ".join(f"{value:.4f}" for value in thresholds),
        )

    simulation = prepare_simulation(config, thresholds[0] if thresholds else None)
    contract = simulation.contract
    rows: list[RoundMetrics] = []
    try:
        asyncio.run(async_drive_rounds(simulation, rows, thresholds))
        contract.finalize_contract()
        published = contract.post_evaluation()
    except SflError as err:
        _LOGGER.error("Run %s aborted in round %s: %s", config.run_name, contract.state.round, err)
        if out_dir is not None:
            if simulation.ledger.pending:
                simulation.ledger.mine_pending()
            _write_outputs(
                simulation,
                rows,
                {"finalized": False, "error": str(err), "config": config.as_dict()},
                out_dir,
            )
        raise
    simulation.ledger.mine_pending()

    summary = {
        **published,
        "finalized": True,
        "final_block_hash": simulation.ledger.head_hash.hex(),
        "attacker_submissions": sum(row.attacker_submissions for row in rows),
        "attackers_rejected": sum(row.attackers_rejected for row in rows),
        "failed_devices": sum(row.failed_devices for row in rows),
        "partition": {
            "per_device_counts": list(simulation.plan.per_device_counts),
            "achieved_emd": list(simulation.plan.achieved_emd),
        },
        "config": config.as_dict(),
    }
    if statistics is not None:
        summary["aa"] = statistics.as_dict()
    if out_dir is not None:
        _write_outputs(simulation, rows, summary, out_dir)
    _LOGGER.info(
        "Run %s finalized after %s rounds, accuracy %.4f",
        config.run_name,
        contract.state.round,
        rows[-1].global_accuracy,
    )
    return RunResult(
        config=config,
        simulation=simulation,
        metrics=rows,
        summary=summary,
        final_block_hash=simulation.ledger.head_hash,
        out_dir=out_dir,
        aa=statistics,
    )


def _well_behaved_quality(simulation: SimulationData) -> list[float]:
    """Mean miner score of well-behaved submissions, per round with any scored."""
    honest = {
        profile.device_id
        for profile in simulation.profiles
        if profile.behavior is Behavior.WELL_BEHAVED
    }
    history: list[float] = []
    for records in simulation.contract.state.submission_history:
        scores = [
            record.quality
            for device_id, record in records.items()
            if device_id in honest and record.quality is not None
        ]
        if not scores:
            break
        history.append(sum(scores) / len(scores))
    return history


def _mean_per_round(histories: Sequence[Sequence[float]]) -> list[float]:
    longest = max((len(history) for history in histories), default=0)
    means = []
    for index in range(longest):
        values = [history[index] for history in histories if len(history) > index]
        means.append(sum(values) / len(values))
    return means


def compute_aa_threshold(
    config: RunConfig,
    repeats: int | None = None,
    out_dir: Path | None = None,
    *,
    vary_seed: bool = True,
    attack_free: bool = True,
) -> AccuracyStatistics:
    """
    Run the scenario ``repeats`` times and return HA, MA and AA of the final accuracies.

    Reference runs have the threshold off and, with ``attack_free``, no
    flipped labels. Each repeat gets a derived seed unless ``vary_seed`` is
    False. Per-round means of the global accuracy and of the miner scores
    given to well-behaved submissions are kept for the threshold schedule.
    """
    count = config.repeats if repeats is None else repeats
    if count < 2:  # noqa: PLR2004
        msg = f"repeats must be at least 2, got {count}"
        raise SpecificationError(msg)
    reference = config.replace(threshold=0.0, aa_auto=False)
    if attack_free:
        reference = reference.replace(flip_rate=0.0)

    finals: list[float] = []
    histories: list[list[float]] = []
    quality_histories: list[list[float]] = []
    for repeat in range(count):
        repeat_config = (
            reference.replace(seed=derive_seed(config.seed, "repeat", repeat))
            if vary_seed
            else reference
        )
        result = run(
            repeat_config,
            out_dir / f"repeat-{repeat:02d}" if out_dir is not None else None,
        )
        finals.append(float(result.final_accuracy or 0.0))
        histories.append([row.global_accuracy for row in result.metrics])
        quality_histories.append(_well_behaved_quality(result.simulation))

    per_round = _mean_per_round(histories)
    per_round_quality = _mean_per_round(quality_histories)
    statistics = AccuracyStatistics(
        highest=max(finals),
        minimum=min(finals),
        average=sum(finals) / len(finals),
        finals=tuple(finals),
        per_round=tuple(per_round),
        per_round_quality=tuple(per_round_quality),
    )
    _LOGGER.info(
        "Over %s runs: HA %.4f, MA %.4f, AA %.4f",
        count,
        statistics.highest,
        statistics.minimum,
        statistics.average,
    )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_summary(out_dir / "aa.json", statistics.as_dict())
    return statistics


@dataclass(frozen=True)
class GridCell:
    """Aggregated results of one (lambda, delta, P) cell."""

    flip_rate: float
    delta: float
    population_size: int
    runs: int
    mean_final_accuracy: float
    attacker_rejection_rate: float | None
    ha: float
    ma: float
    aa: float

    def as_row(self) -> dict[str, Any]:
        """CSV row."""
        return {
            "lambda": self.flip_rate,
            "delta": repr(self.delta),
            "p": self.population_size,
            "runs": self.runs,
            "mean_final_accuracy": repr(self.mean_final_accuracy),
            "attacker_rejection_rate": (
                "" if self.attacker_rejection_rate is None else repr(self.attacker_rejection_rate)
            ),
            "ha": repr(self.ha),
            "ma": repr(self.ma),
            "aa": repr(self.aa),
        }


def run_grid(
    config: RunConfig,
    flip_rates: Sequence[float],
    delta_exponents: Sequence[float],
    populations: Sequence[int] | None = None,
    seeds: int = 3,
    out_dir: Path | None = None,
) -> list[GridCell]:
    """Sweep lambda x delta (x P), ``seeds`` runs per cell, one row per cell."""
    if seeds < 1:
        msg = f"seeds must be positive, got {seeds}"
        raise SpecificationError(msg)
    cells: list[GridCell] = []
    for population_size in populations or [config.population_size]:
        for flip_rate in flip_rates:
            for exponent in delta_exponents:
                cell_config = config.replace(
                    population_size=int(population_size),
                    flip_rate=float(flip_rate),
                    delta=math.exp(-float(exponent)),
                )
                results = [
                    run(cell_config.replace(seed=derive_seed(config.seed, "grid", index)))
                    for index in range(seeds)
                ]
                finals = [float(result.final_accuracy or 0.0) for result in results]
                submitted = sum(result.attacker_submissions for result in results)
                rejected = sum(result.attackers_rejected for result in results)
                cells.append(
                    GridCell(
                        flip_rate=float(flip_rate),
                        delta=cell_config.delta,
                        population_size=int(population_size),
                        runs=seeds,
                        mean_final_accuracy=sum(finals) / len(finals),
                        attacker_rejection_rate=rejected / submitted if submitted else None,
                        ha=max(finals),
                        ma=min(finals),
                        aa=sum(finals) / len(finals),
                    )
                )
                _LOGGER.info(
                    "Cell P=%s lambda=%s delta=exp(-%s): accuracy %.4f",
                    population_size,
                    flip_rate,
                    exponent,
                    cells[-1].mean_final_accuracy,
                )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_table(out_dir / GRID_FILENAME, [cell.as_row() for cell in cells])
    return cells
