"""Exceptions raised by sfl_sim."""

from __future__ import annotations


class SflError(Exception):
    """Base class for every simulator error."""


class SpecificationError(SflError, ValueError):
    """A model, privacy or task specification is invalid."""


class DimensionMismatchError(SflError, ValueError):
    """Two vectors or a vector and a model disagree on dimension."""


class EmptyDatasetError(SflError, ValueError):
    """A dataset (or list of updates) was empty where data is required."""


class GasExhaustedError(SflError):
    """A transaction does not fit into the block gas limit."""


class UnknownSenderError(SflError):
    """A transaction was sent from a wallet the ledger does not know."""


class InsufficientFundsError(SflError):
    """A wallet balance is too small for the requested transfer."""


class InsufficientEscrowError(SflError):
    """An escrow balance is too small for the requested payout."""


class InvalidPhaseError(SflError):
    """A contract operation was called outside its legal phase."""


class DuplicateSubmissionError(SflError):
    """A device submitted twice in the same round."""


class NoSubmissionsError(SflError):
    """Evaluation was requested for a round without submissions."""


class InfeasiblePartitionError(SflError):
    """The requested shard cannot be drawn from the available examples."""


class CommitmentError(SflError, ValueError):
    """A test-data commitment could not be built."""


class ConfigError(SflError, ValueError):
    """A run configuration failed validation."""


class IdxFormatError(SflError):
    """An IDX file is malformed or inconsistent with its pair."""


class LedgerVerificationError(SflError):
    """A ledger dump failed end-to-end verification."""


class SubmissionRejectedError(SflError):
    """A submission was refused at intake (no passing local evaluation score)."""
