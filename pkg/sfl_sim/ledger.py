"""
Simulated blockchain.

Append-only blocks of transactions with per-block gas limits, wallet
balances, reward escrow and hash commitments over test-data groups. The
ledger is a single logical writer: transactions may be produced from any
thread but are queued and mined under one lock.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from ._compat import StrEnum
from typing import TYPE_CHECKING, Any

from .codec import digest, sha256
from .const import (
    ADDRESS_SIZE,
    DEFAULT_BLOCK_GAS_LIMIT,
    DIGEST_SIZE,
    RECEIPT_DEFERRED,
    RECEIPT_GAS_EXHAUSTED,
    RECEIPT_QUEUED,
    ZERO_DIGEST,
)
from .exceptions import (
    CommitmentError,
    GasExhaustedError,
    InsufficientEscrowError,
    InsufficientFundsError,
    LedgerVerificationError,
    SpecificationError,
    UnknownSenderError,
)

if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from .model import Dataset

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class WalletAddress:
    """A 20-byte account identifier, rendered as 40 hex characters."""

    raw: bytes

    def __post_init__(self) -> None:
        """Check the length."""
        if len(self.raw) != ADDRESS_SIZE:
            msg = f"Wallet address must be {ADDRESS_SIZE} bytes, got {len(self.raw)}"
            raise SpecificationError(msg)

    def __str__(self) -> str:
        """Return the hex form."""
        return self.raw.hex()

    @classmethod
    def derive(cls, run_seed: int, index: int, role: str = "participant") -> WalletAddress:
        """Deterministic address for participant ``index`` of a run."""
        return cls(digest(("wallet", run_seed, role, index))[:ADDRESS_SIZE])

    @classmethod
    def from_hex(cls, text: str) -> WalletAddress:
        """Parse the 40-character hex form."""
        return cls(bytes.fromhex(text))


class TxKind(StrEnum):
    """Transaction kinds, one per state-mutating contract function."""

    DEPLOY = "Deploy"
    INIT = "Init"
    ANNOUNCE = "Announce"
    SUBMIT = "Submit"
    DISCLOSE = "Disclose"
    EVALUATE = "Evaluate"
    AGGREGATE = "Aggregate"
    REPORT = "Report"
    FINALIZE = "Finalize"
    POST = "Post"


@dataclass(frozen=True)
class Transaction:
    """A ledger record committing to a payload by its hash."""

    kind: TxKind
    sender: WalletAddress
    payload_hash: bytes
    gas_used: int
    round: int

    @property
    def tx_hash(self) -> bytes:
        """SHA-256 over the canonical encoding of every field."""
        return digest(
            (self.kind.value, self.sender.raw, self.payload_hash, self.gas_used, self.round)
        )

    def as_dict(self) -> dict[str, Any]:
        """JSON-ready form with hex digests."""
        return {
            "kind": self.kind.value,
            "sender": str(self.sender),
            "payload_hash": self.payload_hash.hex(),
            "gas_used": self.gas_used,
            "round": self.round,
            "tx_hash": self.tx_hash.hex(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Transaction:
        """Inverse of ``as_dict`` (the stored tx_hash is ignored)."""
        return cls(
            kind=TxKind(data["kind"]),
            sender=WalletAddress.from_hex(data["sender"]),
            payload_hash=bytes.fromhex(data["payload_hash"]),
            gas_used=int(data["gas_used"]),
            round=int(data["round"]),
        )


def compute_block_hash(height: int, parent_hash: bytes, txs: Sequence[Transaction]) -> bytes:
    """SHA-256 over (height, parent hash, concatenated transaction hashes)."""
    return digest((height, parent_hash, b"".join(tx.tx_hash for tx in txs)))


@dataclass(frozen=True)
class Block:
    """A mined block."""

    height: int
    parent_hash: bytes
    txs: tuple[Transaction, ...]
    block_hash: bytes
    gas_limit: int

    @property
    def gas_used(self) -> int:
        """Total gas of the block's transactions."""
        return sum(tx.gas_used for tx in self.txs)

    def as_dict(self) -> dict[str, Any]:
        """JSON-ready form with hex digests."""
        return {
            "height": self.height,
            "parent_hash": self.parent_hash.hex(),
            "block_hash": self.block_hash.hex(),
            "gas_limit": self.gas_limit,
            "gas_used": self.gas_used,
            "txs": [tx.as_dict() for tx in self.txs],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Block:
        """Inverse of ``as_dict``."""
        return cls(
            height=int(data["height"]),
            parent_hash=bytes.fromhex(data["parent_hash"]),
            txs=tuple(Transaction.from_dict(tx) for tx in data["txs"]),
            block_hash=bytes.fromhex(data["block_hash"]),
            gas_limit=int(data["gas_limit"]),
        )


@dataclass(frozen=True)
class Receipt:
    """Outcome of queueing a transaction."""

    accepted: bool
    reason: str
    tx_hash: bytes


@dataclass
class Escrow:
    """Contract-held reward balance."""

    escrow_id: int
    depositor: WalletAddress
    initial: int
    balance: int
    payouts: list[tuple[WalletAddress, int]] = field(default_factory=list)
    refunded: int = 0


@dataclass(frozen=True)
class Commitment:
    """Hashes of the test-data groups and of the group-index seed."""

    group_hashes: tuple[bytes, ...]
    index_seed_hash: bytes


def commit_test_data(groups: Sequence[Dataset], index_seed: bytes) -> Commitment:
    """Hash every data group and the index seed."""
    if not groups:
        msg = "At least one test-data group is required"
        raise CommitmentError(msg)
    return Commitment(
        group_hashes=tuple(digest(group) for group in groups),
        index_seed_hash=sha256(index_seed),
    )


def verify_commitment(groups: Sequence[Dataset], commitment: Commitment) -> bool:
    """True iff ``groups`` hash, in order, to the committed digests."""
    if len(groups) != len(commitment.group_hashes):
        return False
    return all(
        digest(group) == expected
        for group, expected in zip(groups, commitment.group_hashes, strict=True)
    )


class Ledger:
    """Wallets, escrows, the pending transaction pool and the chain."""

    def __init__(self, gas_limit: int = DEFAULT_BLOCK_GAS_LIMIT) -> None:
        """Initialize an empty chain with the given block gas limit."""
        if gas_limit < 1:
            msg = f"gas_limit must be positive, got {gas_limit}"
            raise SpecificationError(msg)
        self.gas_limit = gas_limit
        self._balances: dict[WalletAddress, int] = {}
        self._escrows: list[Escrow] = []
        self._pending: list[Transaction] = []
        self._chain: list[Block] = []
        self._minted = 0
        self._lock = threading.RLock()

    # wallets

    def register_wallet(self, address: WalletAddress, balance: int = 0) -> None:
        """Create a wallet holding ``balance`` freshly minted tokens."""
        if balance < 0:
            msg = f"Initial balance must not be negative, got {balance}"
            raise SpecificationError(msg)
        with self._lock:
            if address in self._balances:
                msg = f"Wallet {address} is already registered"
                raise SpecificationError(msg)
            self._balances[address] = balance
            self._minted += balance

    def is_registered(self, address: WalletAddress) -> bool:
        """Whether the ledger knows ``address``."""
        return address in self._balances

    def balance_of(self, address: WalletAddress) -> int:
        """Token balance of a wallet."""
        try:
            return self._balances[address]
        except KeyError as err:
            msg = f"Unknown wallet {address}"
            raise UnknownSenderError(msg) from err

    @property
    def initial_supply(self) -> int:
        """Tokens minted at wallet registration."""
        return self._minted

    def total_supply(self) -> int:
        """Sum of all wallet balances plus every escrow balance."""
        with self._lock:
            return sum(self._balances.values()) + sum(
                escrow.balance for escrow in self._escrows
            )

    # escrow

    def deposit_escrow(self, depositor: WalletAddress, amount: int) -> Escrow:
        """Move ``amount`` tokens from ``depositor`` into a new escrow."""
        if amount <= 0:
            msg = f"Escrow deposit must be positive, got {amount}"
            raise SpecificationError(msg)
        with self._lock:
            balance = self.balance_of(depositor)
            if balance < amount:
                msg = f"{depositor} holds {balance} tokens, {amount} needed"
                raise InsufficientFundsError(msg)
            self._balances[depositor] = balance - amount
            escrow = Escrow(
                escrow_id=len(self._escrows),
                depositor=depositor,
                initial=amount,
                balance=amount,
            )
            self._escrows.append(escrow)
        _LOGGER.debug("Escrow %s funded with %s tokens", escrow.escrow_id, amount)
        return escrow

    def payout(self, escrow: Escrow, to: WalletAddress, amount: int) -> Escrow:
        """Pay ``amount`` from ``escrow`` to ``to``."""
        if amount < 0:
            msg = f"Payout must not be negative, got {amount}"
            raise SpecificationError(msg)
        with self._lock:
            if not self.is_registered(to):
                msg = f"Unknown payee {to}"
                raise UnknownSenderError(msg)
            if escrow.balance < amount:
                msg = f"Escrow {escrow.escrow_id} holds {escrow.balance}, {amount} requested"
                raise InsufficientEscrowError(msg)
            escrow.balance -= amount
            self._balances[to] += amount
            escrow.payouts.append((to, amount))
        return escrow

    def refund(self, escrow: Escrow) -> int:
        """Return whatever remains in ``escrow`` to its depositor."""
        with self._lock:
            remainder = escrow.balance
            escrow.balance = 0
            escrow.refunded += remainder
            self._balances[escrow.depositor] += remainder
        return remainder

    # transactions and blocks

    def check_gas(self, gas: int) -> None:
        """Raise GasExhaustedError if ``gas`` can never fit into a block."""
        if gas > self.gas_limit:
            msg = f"Transaction needs {gas} gas, block limit is {self.gas_limit}"
            raise GasExhaustedError(msg)

    def submit_tx(self, tx: Transaction) -> Receipt:
        """
        Queue ``tx`` for the next block that has room for it.

        A transaction that can never fit into a block is not queued; its
        receipt says so. The reason of an accepted receipt is ``queued`` when
        the transaction makes the next block and ``deferred`` when the pool
        ahead of it already fills that block.
        """
        if len(tx.payload_hash) != DIGEST_SIZE:
            msg = "payload_hash must be a 32-byte digest"
            raise SpecificationError(msg)
        with self._lock:
            if not self.is_registered(tx.sender):
                msg = f"Unknown sender {tx.sender}"
                raise UnknownSenderError(msg)
            if tx.gas_used > self.gas_limit:
                reason = (
                    f"{RECEIPT_GAS_EXHAUSTED}: needs {tx.gas_used} gas, block limit is {self.gas_limit}"
                )
                _LOGGER.debug("Rejected %s from %s: %s", tx.kind, tx.sender, reason)
                return Receipt(accepted=False, reason=reason, tx_hash=tx.tx_hash)
            ahead = sum(item.gas_used for item in self._pending)
            self._pending.append(tx)
        reason = RECEIPT_QUEUED if ahead + tx.gas_used <= self.gas_limit else RECEIPT_DEFERRED
        _LOGGER.debug("%s %s from %s (%s gas)", reason, tx.kind, tx.sender, tx.gas_used)
        return Receipt(accepted=True, reason=reason, tx_hash=tx.tx_hash)

    @property
    def pending(self) -> tuple[Transaction, ...]:
        """Transactions waiting for a block."""
        return tuple(self._pending)

    @property
    def chain(self) -> tuple[Block, ...]:
        """Mined blocks, genesis first."""
        return tuple(self._chain)

    @property
    def head_hash(self) -> bytes:
        """Hash of the last block, or zeros before the first block."""
        return self._chain[-1].block_hash if self._chain else ZERO_DIGEST

    def mine_block(self) -> Block:
        """
        Append a block holding the pending transactions that fit.

        Transactions are packed in queue order; the first one that would push
        the block over its gas limit, and everything after it, waits for the
        next block.
        """
        with self._lock:
            packed: list[Transaction] = []
            used = 0
            for tx in self._pending:
                if used + tx.gas_used > self.gas_limit:
                    break
                packed.append(tx)
                used += tx.gas_used
            del self._pending[: len(packed)]

            height = len(self._chain)
            parent = self.head_hash
            block = Block(
                height=height,
                parent_hash=parent,
                txs=tuple(packed),
                block_hash=compute_block_hash(height, parent, packed),
                gas_limit=self.gas_limit,
            )
            self._chain.append(block)
        _LOGGER.debug(
            "Mined block %s with %s transactions (%s gas)", height, len(packed), used
        )
        return block

    def mine_pending(self) -> list[Block]:
        """Mine until the pool is empty; always mines at least one block."""
        blocks = [self.mine_block()]
        while self._pending:
            blocks.append(self.mine_block())
        return blocks

    def dump(self, path: Path) -> None:
        """Write the chain as a JSON document, one object per block."""
        document = {
            "gas_limit": self.gas_limit,
            "head_hash": self.head_hash.hex(),
            "blocks": [block.as_dict() for block in self.chain],
        }
        path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")


def load_chain(path: Path) -> list[Block]:
    """Read the blocks of a ledger dump."""
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
        return [Block.from_dict(block) for block in document["blocks"]]
    except (OSError, ValueError, KeyError, TypeError) as err:
        msg = f"Cannot read ledger dump {path}: {err}"
        raise LedgerVerificationError(msg) from err


def check_chain(blocks: Sequence[Block]) -> None:
    """Raise LedgerVerificationError at the first broken link, hash or gas bound."""
    parent = ZERO_DIGEST
    for height, block in enumerate(blocks):
        if block.height != height:
            msg = f"Block {height} carries height {block.height}"
            raise LedgerVerificationError(msg)
        if block.parent_hash != parent:
            msg = f"Block {height} does not link to its parent"
            raise LedgerVerificationError(msg)
        if compute_block_hash(block.height, block.parent_hash, block.txs) != block.block_hash:
            msg = f"Block {height} hash does not match its contents"
            raise LedgerVerificationError(msg)
        if block.gas_used > block.gas_limit:
            msg = f"Block {height} uses {block.gas_used} gas over its limit {block.gas_limit}"
            raise LedgerVerificationError(msg)
        parent = block.block_hash


def verify_chain(blocks: Sequence[Block]) -> bool:
    """True iff the chain verifies end to end."""
    try:
        check_chain(blocks)
    except LedgerVerificationError:
        return False
    return True
