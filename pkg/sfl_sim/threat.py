"""Participant population: honest devices, label-flipping attackers and low-quality data."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from ._compat import StrEnum
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from .exceptions import (
    DimensionMismatchError,
    EmptyDatasetError,
    InfeasiblePartitionError,
    SpecificationError,
)
from .ledger import WalletAddress

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .model import Dataset

_LOGGER = logging.getLogger(__name__)

EMD_TOLERANCE = 0.05
_NORMALIZATION_TOL = 1e-9


class Behavior(StrEnum):
    """How a participant produces its updates."""

    WELL_BEHAVED = "well_behaved"
    MALICIOUS = "malicious"
    UNRELIABLE = "unreliable"


@dataclass(frozen=True, eq=False)
class ParticipantProfile:
    """A simulated device and the shard it trains on."""

    device_id: str
    wallet: WalletAddress
    behavior: Behavior
    local_data: Dataset
    shard_indices: npt.NDArray[np.int64]
    achieved_emd: float
    rational: bool = False
    flip_rate: float = 0.0
    target_emd: float = 0.0


@dataclass(frozen=True)
class PartitionPlan:
    """Shard sizes and their distance to the population label distribution."""

    population_size: int
    per_device_counts: tuple[int, ...]
    achieved_emd: tuple[float, ...]


def largest_remainder(total: int, weights: Sequence[float]) -> npt.NDArray[np.int64]:
    """
    Round ``total * weights / sum(weights)`` to integers that sum to ``total``.

    Leftover units go to the largest fractional parts, lowest index first on
    ties.
    """
    shares = np.asarray(weights, dtype=np.float64)
    if shares.ndim != 1 or shares.size == 0 or np.any(shares < 0) or shares.sum() <= 0:
        msg = f"weights must be non-negative with a positive sum, got {list(weights)}"
        raise SpecificationError(msg)
    quotas = total * shares / shares.sum()
    counts = np.floor(quotas).astype(np.int64)
    leftover = total - int(counts.sum())
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:leftover]] += 1
    return counts


def flip_labels(data: Dataset, flip_rate: float, rng: np.random.Generator) -> Dataset:
    """
    Give round(flip_rate * n) rows, chosen without replacement, a different label.

    The new label is uniform over the other C - 1 classes. Features are untouched.
    The generator is consumed identically for every rate, so with equal
    generator states the rows flipped at a lower rate are a subset of those
    flipped at a higher one and get the same new labels.
    """
    if data.class_count < 2:  # noqa: PLR2004
        msg = "Label flipping needs at least two classes"
        raise SpecificationError(msg)
    if not 0.0 < flip_rate <= 1.0:
        msg = f"flip_rate must lie in (0, 1], got {flip_rate}"
        raise SpecificationError(msg)
    count = int(np.floor(flip_rate * len(data) + 0.5))
    order = rng.permutation(len(data))
    offsets = rng.integers(1, data.class_count, size=len(data))
    chosen = order[:count]
    labels = data.labels.copy()
    labels[chosen] = (labels[chosen] + offsets[chosen]) % data.class_count
    return data.with_labels(labels)


def compute_emd(p: npt.ArrayLike, q: npt.ArrayLike) -> float:
    """Earth mover's distance between class distributions, as sum |p_k - q_k|."""
    left = np.asarray(p, dtype=np.float64)
    right = np.asarray(q, dtype=np.float64)
    if left.ndim != 1 or left.shape != right.shape:
        msg = f"Distributions must be vectors of equal length, got {left.shape} and {right.shape}"
        raise DimensionMismatchError(msg)
    for name, dist in (("p", left), ("q", right)):
        if np.any(dist < 0) or abs(float(dist.sum()) - 1.0) > _NORMALIZATION_TOL:
            msg = f"{name} is not a probability distribution"
            raise SpecificationError(msg)
    return float(np.abs(left - right).sum())


def _shard_counts(
    dominant: int, dominant_count: int, size: int, reference: npt.NDArray[np.float64]
) -> npt.NDArray[np.int64]:
    counts = largest_remainder(size - dominant_count, reference)
    counts[dominant] += dominant_count
    return counts


def draw_noniid_indices(
    labels: npt.NDArray[np.int64],
    class_count: int,
    target_emd: float,
    size: int,
    rng: np.random.Generator,
    reference: npt.NDArray[np.float64],
) -> npt.NDArray[np.int64]:
    """
    Pick ``size`` positions of ``labels`` whose class mix is ``target_emd`` from ``reference``.

    The shard mixes a stratified draw with a draw from one dominant class;
    the dominant share is found by bisection. Dominant classes are tried in a
    random order until one has enough examples.
    """
    if size < 1 or size > labels.shape[0]:
        msg = f"Cannot draw {size} examples from {labels.shape[0]}"
        raise InfeasiblePartitionError(msg)
    ceiling = 2.0 * (class_count - 1) / class_count
    if not 0.0 <= target_emd <= ceiling + _NORMALIZATION_TOL:
        msg = f"target_emd must lie in [0, {ceiling:.4f}], got {target_emd}"
        raise SpecificationError(msg)
    available = np.bincount(labels, minlength=class_count)

    def emd_at(dominant: int, dominant_count: int) -> float:
        counts = _shard_counts(dominant, dominant_count, size, reference)
        return compute_emd(counts / size, reference)

    for dominant in rng.permutation(class_count):
        low, high = 0, size
        if emd_at(dominant, high) < target_emd - EMD_TOLERANCE:
            continue
        while low < high:
            middle = (low + high) // 2
            if emd_at(dominant, middle) >= target_emd:
                high = middle
            else:
                low = middle + 1
        candidates = [low] if low == 0 else [low - 1, low]
        best = min(candidates, key=lambda n: abs(emd_at(dominant, n) - target_emd))
        counts = _shard_counts(dominant, best, size, reference)
        if np.any(counts > available):
            continue
        if abs(emd_at(dominant, best) - target_emd) > EMD_TOLERANCE:
            continue
        chosen = [
            rng.choice(np.flatnonzero(labels == label), size=int(count), replace=False)
            for label, count in enumerate(counts)
            if count
        ]
        return rng.permutation(np.concatenate(chosen)).astype(np.int64)

    msg = f"No shard of {size} examples reaches EMD {target_emd} within {EMD_TOLERANCE}"
    raise InfeasiblePartitionError(msg)


def partition_noniid(
    data: Dataset,
    target_emd: float,
    size: int,
    rng: np.random.Generator,
    reference: npt.ArrayLike | None = None,
) -> Dataset:
    """Draw a shard whose label distribution lies ``target_emd`` away from ``reference``."""
    if len(data) == 0:
        msg = "Cannot partition an empty dataset"
        raise EmptyDatasetError(msg)
    population = (
        data.label_distribution()
        if reference is None
        else np.asarray(reference, dtype=np.float64)
    )
    indices = draw_noniid_indices(
        data.labels, data.class_count, target_emd, size, rng, population
    )
    return data.subset(indices)


def _check_mix(mix: Sequence[float]) -> None:
    if len(mix) != 3 or any(share < 0 for share in mix):  # noqa: PLR2004
        msg = f"mix must be three non-negative fractions, got {list(mix)}"
        raise SpecificationError(msg)
    if abs(sum(mix) - 1.0) > _NORMALIZATION_TOL:
        msg = f"mix fractions must sum to 1, got {sum(mix)}"
        raise SpecificationError(msg)


def build_population(
    population_size: int,
    mix: Sequence[float],
    flip_rate: float,
    target_emd: float,
    data: Dataset,
    rng: np.random.Generator,
    *,
    shard_size: int | None = None,
    wallet_seed: int = 0,
    rational: bool = False,
) -> list[ParticipantProfile]:
    """
    Split ``data`` into disjoint shards for a well-behaved/malicious/unreliable mix.

    Unreliable shards are drawn first with the non-IID partitioner; the rest
    is shuffled and dealt as IID shards. Malicious shards then have
    ``flip_rate`` of their labels flipped (0 leaves them clean).
    """
    if population_size < 1:
        msg = f"population_size must be positive, got {population_size}"
        raise SpecificationError(msg)
    _check_mix(mix)
    if not 0.0 <= flip_rate <= 1.0:
        msg = f"flip_rate must lie in [0, 1], got {flip_rate}"
        raise SpecificationError(msg)
    size = len(data) // population_size if shard_size is None else shard_size
    if size < 1 or size * population_size > len(data):
        msg = f"{len(data)} examples cannot fill {population_size} shards of {size}"
        raise InfeasiblePartitionError(msg)

    well, malicious, unreliable = (int(count) for count in largest_remainder(population_size, mix))
    behaviors = (
        [Behavior.WELL_BEHAVED] * well
        + [Behavior.MALICIOUS] * malicious
        + [Behavior.UNRELIABLE] * unreliable
    )
    reference = data.label_distribution()
    unused = np.ones(len(data), dtype=bool)
    shards: list[npt.NDArray[np.int64]] = [np.empty(0, dtype=np.int64)] * population_size

    for index, behavior in enumerate(behaviors):
        if behavior is not Behavior.UNRELIABLE:
            continue
        pool = np.flatnonzero(unused)
        picked = draw_noniid_indices(
            data.labels[pool], data.class_count, target_emd, size, rng, reference
        )
        shards[index] = pool[picked]
        unused[shards[index]] = False

    pool = rng.permutation(np.flatnonzero(unused))
    iid_devices = [
        index for index, behavior in enumerate(behaviors) if behavior is not Behavior.UNRELIABLE
    ]
    for position, index in enumerate(iid_devices):
        shards[index] = pool[position * size : (position + 1) * size]

    width = max(3, len(str(population_size - 1)))
    profiles = []
    for index, behavior in enumerate(behaviors):
        shard = data.subset(shards[index])
        if behavior is Behavior.MALICIOUS and flip_rate > 0:
            shard = flip_labels(shard, flip_rate, rng)
        profiles.append(
            ParticipantProfile(
                device_id=f"device-{index:0{width}d}",
                wallet=WalletAddress.derive(wallet_seed, index),
                behavior=behavior,
                local_data=shard,
                shard_indices=shards[index],
                achieved_emd=compute_emd(shard.label_distribution(), reference),
                rational=rational,
                flip_rate=flip_rate if behavior is Behavior.MALICIOUS else 0.0,
                target_emd=target_emd if behavior is Behavior.UNRELIABLE else 0.0,
            )
        )
    _LOGGER.info(
        "Population of %s: %s well-behaved, %s malicious, %s unreliable, %s examples each",
        population_size,
        well,
        malicious,
        unreliable,
        size,
    )
    return profiles


def partition_plan(profiles: Sequence[ParticipantProfile], total: int) -> PartitionPlan:
    """Summarize a population's shards, checking they fit into ``total`` examples."""
    counts = tuple(len(profile.local_data) for profile in profiles)
    if sum(counts) > total:
        msg = f"Shards hold {sum(counts)} examples, only {total} exist"
        raise InfeasiblePartitionError(msg)
    return PartitionPlan(
        population_size=len(profiles),
        per_device_counts=counts,
        achieved_emd=tuple(profile.achieved_emd for profile in profiles),
    )
