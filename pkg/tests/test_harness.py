"""End-to-end tests for runs, reference statistics, grids and the command line."""

from __future__ import annotations

import asyncio
import dataclasses
import json
import math
from itertools import pairwise

import numpy as np
import pytest
from conftest import fast_overrides

from sfl_sim import __version__
from sfl_sim.cli import main
from sfl_sim.config import load_config
from sfl_sim.const import LEDGER_FILENAME, METRICS_FILENAME, SUMMARY_FILENAME
from sfl_sim.contract import Phase
from sfl_sim.exceptions import GasExhaustedError
from sfl_sim.harness import (
    AccuracyStatistics,
    async_drive_rounds,
    compute_aa_threshold,
    prepare_simulation,
    run,
    run_grid,
)
from sfl_sim.metrics import read_metrics_csv, write_metrics_csv
from sfl_sim.model import Dataset, evaluate_accuracy, loss_and_gradient
from sfl_sim.threat import Behavior

HONEST = (1.0, 0.0, 0.0)


def test_run_writes_metrics_ledger_and_summary(fast_config, tmp_path):
    result = run(fast_config, out_dir=tmp_path)
    assert result.finalized
    assert len(result.metrics) == fast_config.max_rounds

    rows = read_metrics_csv(tmp_path / METRICS_FILENAME)
    assert [int(row["round"]) for row in rows] == [1, 2, 3]
    assert "wall_time_ms" not in rows[0]
    summary = json.loads((tmp_path / SUMMARY_FILENAME).read_text())
    assert summary["finalized"]
    assert summary["final_accuracy"] == float(rows[-1]["global_accuracy"])
    assert summary["final_block_hash"] == result.final_block_hash.hex()
    assert summary["rounds"] == 3
    assert main(["verify-ledger", str(tmp_path / LEDGER_FILENAME)]) == 0


def test_runs_are_reproducible(fast_config, tmp_path):
    first = run(fast_config, out_dir=tmp_path / "first")
    second = run(fast_config, out_dir=tmp_path / "second")
    assert first.final_block_hash == second.final_block_hash
    for name in (METRICS_FILENAME, LEDGER_FILENAME, SUMMARY_FILENAME):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


def test_a_different_seed_changes_the_ledger(fast_config):
    assert run(fast_config).final_block_hash != run(fast_config.replace(seed=12)).final_block_hash


@pytest.mark.parametrize("seed", [*range(1, 11), (1 << 63) + 1, (1 << 64) - 1])
def test_any_seed_in_range_runs_to_completion(fast_config, seed):
    result = run(fast_config.replace(seed=seed, max_rounds=1))
    assert result.finalized
    assert result.simulation.contract.phase is Phase.FINALIZED


def test_rewards_and_escrow_balance_out(fast_config):
    result = run(fast_config)
    ledger = result.simulation.ledger
    report = result.simulation.contract.state.payout_report
    assert report.total_paid + report.refund == fast_config.reward_total
    assert ledger.total_supply() == ledger.initial_supply
    paid = {profile.device_id: ledger.balance_of(profile.wallet) for profile in result.simulation.profiles}
    assert {device: amount for device, amount in paid.items() if amount} == result.rewarded_devices()


def test_timing_column_is_opt_in(fast_config, tmp_path):
    run(fast_config.replace(record_timing=True), out_dir=tmp_path)
    rows = read_metrics_csv(tmp_path / METRICS_FILENAME)
    assert all(float(row["wall_time_ms"]) >= 0 for row in rows)


def test_honest_run_improves_on_the_initial_model(fast_config):
    config = fast_config.replace(mix=HONEST, flip_rate=0.0)
    result = run(config)
    simulation = result.simulation
    initial = simulation.contract.state.task.initial_model
    test = Dataset.concat(simulation.test_groups)
    baseline = evaluate_accuracy(initial.params, initial.spec, test)
    assert result.final_accuracy >= 0.85
    assert result.final_accuracy > baseline
    assert all(row.qualified_count == row.submissions for row in result.metrics)


def test_one_noise_free_round_is_a_pooled_gradient_step(fast_config):
    config = fast_config.replace(
        mix=HONEST,
        flip_rate=0.0,
        threshold=0.0,
        sensitivity=math.inf,
        sigma_override=0.0,
        batch_size=10_000,
        local_epochs=1,
        max_rounds=1,
    )
    simulation = prepare_simulation(config)
    initial = simulation.contract.get_global_model()
    rows = []
    asyncio.run(async_drive_rounds(simulation, rows))
    assert rows[0].qualified_count == config.population_size

    pooled = Dataset.concat([profile.local_data for profile in simulation.profiles])
    _, gradient = loss_and_gradient(initial.params, initial.spec, pooled.features, pooled.labels)
    expected = initial.params - config.learning_rate * gradient
    np.testing.assert_allclose(
        simulation.contract.get_global_model().params, expected, rtol=0, atol=1e-9
    )


def test_failed_device_jobs_are_counted(fast_config, tmp_path):
    config = fast_config.replace(max_rounds=1)
    simulation = prepare_simulation(config)
    coordinator = simulation.coordinator
    wrong_shape = Dataset(np.zeros((3, 2)), np.zeros(3, dtype=np.int64), class_count=2)
    coordinator.profiles[0] = dataclasses.replace(coordinator.profiles[0], local_data=wrong_shape)
    rows = []
    asyncio.run(async_drive_rounds(simulation, rows))
    assert rows[0].failed_devices == 1
    assert rows[0].submissions == config.population_size - 1

    write_metrics_csv(tmp_path / METRICS_FILENAME, rows)
    assert read_metrics_csv(tmp_path / METRICS_FILENAME)[0]["failed_devices"] == "1"


def test_summary_reports_the_partition(fast_config):
    result = run(fast_config)
    partition = result.summary["partition"]
    counts = [len(profile.local_data) for profile in result.simulation.profiles]
    assert partition["per_device_counts"] == counts
    assert len(partition["achieved_emd"]) == fast_config.population_size
    assert result.summary["failed_devices"] == 0
    assert all(row.failed_devices == 0 for row in result.metrics)


def test_evaluation_over_the_gas_limit_aborts_the_run(fast_config, tmp_path):
    config = fast_config.replace(gas_limit=1000)
    with pytest.raises(GasExhaustedError):
        run(config, out_dir=tmp_path)
    summary = json.loads((tmp_path / SUMMARY_FILENAME).read_text())
    assert not summary["finalized"]
    assert "gas" in summary["error"]
    assert read_metrics_csv(tmp_path / METRICS_FILENAME) == []


def test_local_evaluation_keeps_the_run_going(fast_config):
    result = run(fast_config.replace(gas_limit=1000, local_evaluation=True))
    assert result.finalized
    assert result.summary["local_evaluation"]
    first, *later = result.metrics
    # scoreless first-round submissions cannot qualify in local mode
    assert first.qualified_count == 0
    assert all(row.qualified_count == row.submissions for row in later)


def test_run_without_disclosure_evaluates_on_fallback_data(fast_config):
    result = run(fast_config.replace(disclose_test_data=False))
    assert result.finalized
    kinds = {event.tx.kind.value for event in result.simulation.contract.events}
    assert "Disclose" not in kinds


def test_accuracy_statistics_thresholds():
    statistics = AccuracyStatistics(
        highest=0.9, minimum=0.5, average=0.7, finals=(0.9, 0.5, 0.7), per_round=(0.5, 0.8)
    )
    assert statistics.thresholds(0.1, 3) == pytest.approx([0.4, 0.7, 0.7])
    scored = AccuracyStatistics(
        highest=0.9,
        minimum=0.5,
        average=0.7,
        finals=(0.9, 0.5, 0.7),
        per_round=(0.5, 0.8),
        per_round_quality=(0.6, 0.85),
    )
    assert scored.thresholds(0.1, 3) == pytest.approx([0.5, 0.75, 0.75])
    flat = AccuracyStatistics(highest=0.1, minimum=0.0, average=0.03, finals=(0.1, 0.0))
    assert flat.thresholds(0.05, 2) == [0.0, 0.0]


def test_reference_statistics_match_the_repeat_files(fast_config, tmp_path):
    statistics = compute_aa_threshold(fast_config, out_dir=tmp_path)
    finals = [
        float(read_metrics_csv(tmp_path / f"repeat-{index:02d}" / METRICS_FILENAME)[-1]["global_accuracy"])
        for index in range(fast_config.repeats)
    ]
    assert list(statistics.finals) == finals
    assert statistics.highest == max(finals)
    assert statistics.minimum == min(finals)
    assert statistics.average == pytest.approx(sum(finals) / len(finals), abs=1e-12)
    assert statistics.minimum <= statistics.average <= statistics.highest
    stored = json.loads((tmp_path / "aa.json").read_text())
    assert stored["aa"] == statistics.average
    assert 1 <= len(statistics.per_round_quality) <= fast_config.max_rounds
    assert stored["per_round_quality"] == list(statistics.per_round_quality)


def test_identical_repeats_agree(fast_config):
    statistics = compute_aa_threshold(fast_config, repeats=2, vary_seed=False)
    assert statistics.highest == statistics.minimum == statistics.average


def test_aa_auto_uses_the_reference_schedule(fast_config):
    config = fast_config.replace(aa_auto=True, aa_margin=0.1, repeats=2)
    result = run(config)
    assert result.aa is not None
    expected = result.aa.thresholds(0.1, config.max_rounds)
    assert expected == pytest.approx(
        [max(0.0, value - 0.1) for value in result.aa.per_round_quality[: config.max_rounds]]
    )
    assert [row.threshold for row in result.metrics] == expected[: len(result.metrics)]
    assert "aa" in result.summary


def test_grid_writes_one_row_per_cell(fast_config, tmp_path):
    cells = run_grid(fast_config, [0.0, 0.5], [1, 5], seeds=1, out_dir=tmp_path)
    assert len(cells) == 4
    lines = (tmp_path / "grid.csv").read_text().splitlines()
    assert len(lines) == 5
    assert lines[0].startswith("lambda,delta,p,")


def _cli_args(**changes):
    args = []
    for key, value in fast_overrides(**changes).items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    return args


def test_cli_run(tmp_path):
    code = main(["run", *_cli_args(out_dir=tmp_path), "--log-level", "warning"])
    assert code == 0
    name = load_config(overrides=fast_overrides()).run_name
    assert (tmp_path / name / METRICS_FILENAME).exists()


def test_cli_version(capsys):
    with pytest.raises(SystemExit) as exc_info:
        main(["--version"])
    assert exc_info.value.code == 0
    assert capsys.readouterr().out.strip() == f"sfl_sim {__version__}"


def test_cli_reports_errors(tmp_path):
    assert main(["run", *_cli_args(out_dir=tmp_path, gas_limit=1000)]) == 1
    assert main(["run", *_cli_args(out_dir=tmp_path, rounds=0)]) == 1


def test_cli_verify_ledger_detects_tampering(fast_config, tmp_path):
    run(fast_config, out_dir=tmp_path)
    path = tmp_path / LEDGER_FILENAME
    document = json.loads(path.read_text())
    document["blocks"][1]["txs"][0]["gas_used"] += 1
    path.write_text(json.dumps(document))
    assert main(["verify-ledger", str(path)]) == 1


@pytest.mark.slow
def test_threshold_rejects_label_flippers(fast_config):
    attacked = fast_config.replace(mix=(0.4, 0.6, 0.0), flip_rate=1.0, max_rounds=1)
    defended = run(attacked.replace(threshold=0.5))
    undefended = run(attacked)

    assert defended.attacker_submissions == 3
    assert defended.attackers_rejected == 3
    assert undefended.attackers_rejected == 0
    assert defended.final_accuracy >= 0.9
    assert defended.final_accuracy >= undefended.final_accuracy

    records = defended.simulation.contract.state.submission_history[0]
    behaviors = {profile.device_id: profile.behavior for profile in defended.simulation.profiles}
    quality = {behavior: [] for behavior in Behavior}
    for device, record in records.items():
        quality[behaviors[device]].append(record.quality)
    assert max(quality[Behavior.MALICIOUS]) < min(quality[Behavior.WELL_BEHAVED])


@pytest.mark.slow
def test_noise_free_runs_bound_noisy_ones(fast_config):
    config = fast_config.replace(mix=HONEST, flip_rate=0.0)
    noiseless = run(config)
    noisy = run(config.replace(sigma_override=2.0))
    assert noiseless.final_accuracy >= noisy.final_accuracy
    assert noiseless.simulation.contract.phase is Phase.FINALIZED


def _mean_final_accuracy(config, seeds):
    return sum(run(config.replace(seed=seed)).final_accuracy for seed in seeds) / len(seeds)


def _rejections(results):
    """(rejected, submitted) per behavior over every round of ``results``."""
    tally = {behavior: [0, 0] for behavior in Behavior}
    for result in results:
        behaviors = {profile.device_id: profile.behavior for profile in result.simulation.profiles}
        for records in result.simulation.contract.state.submission_history:
            for device_id, record in records.items():
                counts = tally[behaviors[device_id]]
                counts[0] += not record.accepted
                counts[1] += 1
    return tally


@pytest.mark.slow
def test_tighter_delta_costs_accuracy():
    base = load_config(overrides={"learning_rate": 0.1})
    seeds = range(1, 11)
    means = [
        _mean_final_accuracy(base.replace(delta=math.exp(-exponent)), seeds)
        for exponent in (1, 3, 5, 6)
    ]
    for looser, tighter in pairwise(means):
        assert tighter <= looser + 0.01
    assert means[-1] < means[0]
    assert _mean_final_accuracy(base.replace(sigma_override=0.0), seeds) >= max(means) - 0.01


@pytest.mark.slow
def test_more_flipped_labels_never_help():
    base = load_config(overrides={"learning_rate": 0.1, "sigma_override": 0.0})
    seeds = range(1, 11)
    means = [
        _mean_final_accuracy(base.replace(flip_rate=flip_rate), seeds)
        for flip_rate in (0.0, 0.05, 0.1, 0.2, 1.0)
    ]
    for lower, higher in pairwise(means):
        assert higher <= lower + 0.005
    assert means[-1] < means[0]


@pytest.mark.slow
def test_aa_auto_filters_attackers_and_keeps_honest_devices(fast_config):
    scenario = fast_config.replace(per_class=200, mix=(0.6, 0.4, 0.0), aa_margin=0.1, repeats=3)
    seeds = range(1, 6)
    defended = [
        run(scenario.replace(seed=seed, flip_rate=1.0, aa_auto=True)) for seed in seeds
    ]
    baseline = _mean_final_accuracy(scenario.replace(flip_rate=0.0), seeds)

    tally = _rejections(defended)
    rejected, submitted = tally[Behavior.MALICIOUS]
    assert rejected >= 0.9 * submitted
    rejected, submitted = tally[Behavior.WELL_BEHAVED]
    assert rejected <= 0.15 * submitted
    mean = sum(result.final_accuracy for result in defended) / len(defended)
    assert mean >= baseline - 0.02
