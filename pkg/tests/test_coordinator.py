"""Tests for device training and intake."""

from __future__ import annotations

import asyncio
import dataclasses

import numpy as np

from sfl_sim.harness import prepare_simulation
from sfl_sim.model import Dataset


def test_every_device_submits_once(fast_config):
    simulation = prepare_simulation(fast_config)
    simulation.contract.open_round()
    intake = asyncio.run(simulation.coordinator.async_run_intake())
    device_ids = sorted(profile.device_id for profile in simulation.profiles)
    assert list(intake.submitted) == device_ids
    assert intake.withheld == intake.refused == intake.failed == ()
    assert sorted(simulation.contract.state.submissions) == device_ids


def test_updates_do_not_depend_on_worker_count(fast_config):
    values = []
    for workers in (1, 4):
        simulation = prepare_simulation(fast_config.replace(workers=workers))
        updates, _ = asyncio.run(simulation.coordinator.async_collect_updates())
        values.append([result.update.values for result in updates])
    for left, right in zip(*values, strict=True):
        np.testing.assert_array_equal(left, right)


def test_rational_devices_withhold_hopeless_updates(fast_config):
    config = fast_config.replace(rational=True, learning_rate=0.0)
    simulation = prepare_simulation(config, threshold=0.9)
    simulation.contract.open_round()
    intake = asyncio.run(simulation.coordinator.async_run_intake())
    assert intake.submitted == ()
    assert len(intake.withheld) == config.population_size
    assert simulation.contract.state.submissions == {}


def test_failing_device_sits_the_round_out(fast_config):
    simulation = prepare_simulation(fast_config)
    coordinator = simulation.coordinator
    broken = coordinator.profiles[0]
    wrong_shape = Dataset(np.zeros((3, 2)), np.zeros(3, dtype=np.int64), class_count=2)
    coordinator.profiles[0] = dataclasses.replace(broken, local_data=wrong_shape)
    simulation.contract.open_round()
    intake = asyncio.run(coordinator.async_run_intake())
    assert intake.failed == (broken.device_id,)
    assert broken.device_id not in intake.submitted
    assert len(intake.submitted) == fast_config.population_size - 1
