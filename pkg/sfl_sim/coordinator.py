"""Round coordinator for sfl_sim."""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .const import DEFAULT_WORKERS
from .contract import local_evaluate
from .exceptions import SflError, SubmissionRejectedError
from .model import local_train
from .privacy import perturb
from .seeding import make_rng

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .contract import SflContract
    from .model import GlobalModel, TrainingConfig
    from .privacy import PerturbedUpdate, PrivacyParams
    from .threat import ParticipantProfile

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeviceResult:
    """A device's perturbed update for one round."""

    profile: ParticipantProfile
    update: PerturbedUpdate
    local_score: float | None


@dataclass(frozen=True)
class IntakeResult:
    """What happened to the round's updates at the contract."""

    submitted: tuple[str, ...]
    withheld: tuple[str, ...]
    refused: tuple[str, ...]
    failed: tuple[str, ...]


class RoundCoordinator:
    """Class to run device training for each round and feed the contract."""

    def __init__(
        self,
        contract: SflContract,
        profiles: Sequence[ParticipantProfile],
        training: TrainingConfig,
        privacy: PrivacyParams,
        master_seed: int,
        workers: int = DEFAULT_WORKERS,
    ) -> None:
        """Initialize the RoundCoordinator."""
        self.contract = contract
        self.profiles = sorted(profiles, key=lambda profile: profile.device_id)
        self.training = training
        self.privacy = privacy
        self.master_seed = master_seed
        self._semaphore = asyncio.Semaphore(workers)

    def _device_job(
        self, profile: ParticipantProfile, global_model: GlobalModel, *, score: bool
    ) -> DeviceResult:
        round_number = global_model.round
        delta = local_train(
            global_model,
            profile.local_data,
            self.training,
            make_rng(self.master_seed, "train", profile.device_id, round_number),
        )
        update = perturb(
            delta,
            self.privacy,
            make_rng(self.master_seed, "noise", profile.device_id, round_number),
            device_id=profile.device_id,
        )
        local_score = (
            local_evaluate(update, global_model, profile.local_data) if score else None
        )
        return DeviceResult(profile=profile, update=update, local_score=local_score)

    async def _async_train_device(
        self, profile: ParticipantProfile, global_model: GlobalModel, *, score: bool
    ) -> DeviceResult:
        async with self._semaphore:
            return await asyncio.to_thread(
                self._device_job, profile, global_model, score=score
            )

    async def async_collect_updates(self) -> tuple[list[DeviceResult], list[str]]:
        """
        Train every device on the current global model.

        Jobs run in worker threads; results come back sorted by device id. A
        device whose job raises is logged and sits the round out.
        """
        global_model = self.contract.get_global_model()
        local_mode = self.contract.state.local_evaluation_active
        _LOGGER.debug(
            "Training %s devices on round %s model", len(self.profiles), global_model.round
        )
        results = await asyncio.gather(
            *(
                self._async_train_device(
                    profile, global_model, score=profile.rational or local_mode
                )
                for profile in self.profiles
            ),
            return_exceptions=True,
        )

        updates: list[DeviceResult] = []
        failed: list[str] = []
        for profile, result in zip(self.profiles, results, strict=True):
            if isinstance(result, BaseException):
                _LOGGER.error(
                    "Device %s failed in round %s: %s",
                    profile.device_id,
                    global_model.round,
                    result,
                )
                failed.append(profile.device_id)
            else:
                updates.append(result)
        return updates, failed

    def submit_updates(self, updates: Sequence[DeviceResult]) -> IntakeResult:
        """
        Hand updates to the contract in device-id order.

        Rational devices withhold updates whose local score misses the
        announced threshold; the contract may still refuse an update at intake.
        """
        threshold = self.contract.announced_threshold
        submitted: list[str] = []
        withheld: list[str] = []
        refused: list[str] = []
        for result in sorted(updates, key=lambda item: item.profile.device_id):
            device_id = result.profile.device_id
            if (
                result.profile.rational
                and result.local_score is not None
                and result.local_score < threshold
            ):
                _LOGGER.debug(
                    "%s withholds its update (local score %.4f < %.4f)",
                    device_id,
                    result.local_score,
                    threshold,
                )
                withheld.append(device_id)
                continue
            try:
                self.contract.submit_model_update(
                    device_id, result.update, result.profile.wallet, result.local_score
                )
            except SubmissionRejectedError as err:
                _LOGGER.debug("%s", err)
                refused.append(device_id)
            else:
                submitted.append(device_id)
        return IntakeResult(
            submitted=tuple(submitted),
            withheld=tuple(withheld),
            refused=tuple(refused),
            failed=(),
        )

    async def async_run_intake(self) -> IntakeResult:
        """Collect this round's updates and submit them."""
        updates, failed = await self.async_collect_updates()
        try:
            intake = self.submit_updates(updates)
        except SflError:
            _LOGGER.exception("Submission failed in round %s", self.contract.state.round)
            raise
        return IntakeResult(
            submitted=intake.submitted,
            withheld=intake.withheld,
            refused=intake.refused,
            failed=tuple(failed),
        )
