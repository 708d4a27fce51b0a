"""Tests for the simulated ledger."""

from __future__ import annotations

import json

import numpy as np
import pytest
from conftest import TOY_DATA

from sfl_sim.codec import sha256
from sfl_sim.exceptions import (
    CommitmentError,
    GasExhaustedError,
    InsufficientEscrowError,
    InsufficientFundsError,
    LedgerVerificationError,
    SpecificationError,
    UnknownSenderError,
)
from sfl_sim.ledger import (
    Ledger,
    Transaction,
    TxKind,
    WalletAddress,
    check_chain,
    commit_test_data,
    load_chain,
    verify_chain,
    verify_commitment,
)
from sfl_sim.model import Dataset

ALICE = WalletAddress.derive(0, 1)
BOB = WalletAddress.derive(0, 2)


def _tx(gas: int, sender: WalletAddress = ALICE, round_: int = 0, tag: str = "") -> Transaction:
    return Transaction(
        kind=TxKind.SUBMIT,
        sender=sender,
        payload_hash=sha256(f"{gas}-{tag}".encode()),
        gas_used=gas,
        round=round_,
    )


@pytest.fixture
def ledger() -> Ledger:
    ledger = Ledger(gas_limit=100)
    ledger.register_wallet(ALICE, 1000)
    ledger.register_wallet(BOB)
    return ledger


def test_wallet_addresses():
    assert len(ALICE.raw) == 20
    assert WalletAddress.from_hex(str(ALICE)) == ALICE
    assert ALICE != BOB
    assert WalletAddress.derive(0, 1) == ALICE
    assert WalletAddress.derive(0, 1, role="publisher") != ALICE
    with pytest.raises(SpecificationError):
        WalletAddress(b"short")


def test_wallet_registration(ledger):
    assert ledger.balance_of(ALICE) == 1000
    assert ledger.initial_supply == 1000
    with pytest.raises(SpecificationError):
        ledger.register_wallet(ALICE)
    with pytest.raises(UnknownSenderError):
        ledger.balance_of(WalletAddress.derive(0, 99))


def test_blocks_pack_in_queue_order(ledger):
    for gas in (60, 50, 30):
        ledger.submit_tx(_tx(gas))
    first = ledger.mine_block()
    assert [tx.gas_used for tx in first.txs] == [60]
    second = ledger.mine_block()
    assert [tx.gas_used for tx in second.txs] == [50, 30]
    assert ledger.pending == ()
    assert second.parent_hash == first.block_hash
    assert ledger.head_hash == second.block_hash


def test_mine_pending_drains_the_pool(ledger):
    for index in range(5):
        ledger.submit_tx(_tx(40, tag=str(index)))
    blocks = ledger.mine_pending()
    assert [len(block.txs) for block in blocks] == [2, 2, 1]
    assert all(block.gas_used <= block.gas_limit for block in ledger.chain)


def test_empty_pool_mines_an_empty_block(ledger):
    block = ledger.mine_block()
    assert block.txs == ()
    assert block.height == 0
    assert verify_chain(ledger.chain)


def test_unknown_sender_is_rejected(ledger):
    with pytest.raises(UnknownSenderError):
        ledger.submit_tx(_tx(10, sender=WalletAddress.derive(0, 42)))
    assert ledger.pending == ()


def test_oversized_transaction_gets_a_rejecting_receipt(ledger):
    receipt = ledger.submit_tx(_tx(101))
    assert not receipt.accepted
    assert receipt.reason.startswith("GasExhausted")
    assert ledger.pending == ()
    with pytest.raises(GasExhaustedError):
        ledger.check_gas(101)
    assert ledger.submit_tx(_tx(100)).accepted
    assert len(ledger.pending) == 1


def test_receipt_reports_deferral_to_a_later_block(ledger):
    assert ledger.submit_tx(_tx(60)).reason == "queued"
    assert ledger.submit_tx(_tx(40, tag="fits")).reason == "queued"
    deferred = ledger.submit_tx(_tx(30))
    assert deferred.accepted
    assert deferred.reason == "deferred"
    first = ledger.mine_block()
    assert deferred.tx_hash not in {tx.tx_hash for tx in first.txs}
    assert [tx.tx_hash for tx in ledger.mine_block().txs] == [deferred.tx_hash]


def test_bad_payload_hash_is_rejected(ledger):
    tx = Transaction(kind=TxKind.SUBMIT, sender=ALICE, payload_hash=b"x", gas_used=1, round=0)
    with pytest.raises(SpecificationError):
        ledger.submit_tx(tx)


def test_receipt_and_tx_hash(ledger):
    tx = _tx(10)
    receipt = ledger.submit_tx(tx)
    assert receipt.accepted
    assert receipt.tx_hash == tx.tx_hash
    assert Transaction.from_dict(tx.as_dict()) == tx
    assert _tx(10, round_=1).tx_hash != tx.tx_hash


def test_escrow_flow(ledger):
    escrow = ledger.deposit_escrow(ALICE, 300)
    assert ledger.balance_of(ALICE) == 700
    ledger.payout(escrow, BOB, 200)
    assert ledger.balance_of(BOB) == 200
    with pytest.raises(InsufficientEscrowError):
        ledger.payout(escrow, BOB, 101)
    assert ledger.refund(escrow) == 100
    assert ledger.balance_of(ALICE) == 800
    assert escrow.balance == 0
    assert ledger.total_supply() == ledger.initial_supply


def test_escrow_needs_funds(ledger):
    with pytest.raises(InsufficientFundsError):
        ledger.deposit_escrow(BOB, 1)
    with pytest.raises(SpecificationError):
        ledger.deposit_escrow(ALICE, 0)
    assert ledger.balance_of(ALICE) == 1000


def test_tokens_are_conserved_under_random_operations():
    rng = np.random.default_rng(5)
    wallets = [WalletAddress.derive(3, index) for index in range(6)]
    ledger = Ledger()
    for wallet in wallets:
        ledger.register_wallet(wallet, int(rng.integers(0, 500)))
    escrows = []
    for _ in range(1000):
        action = rng.integers(3)
        wallet = wallets[rng.integers(len(wallets))]
        amount = int(rng.integers(1, 200))
        try:
            if action == 0:
                escrows.append(ledger.deposit_escrow(wallet, amount))
            elif action == 1 and escrows:
                ledger.payout(escrows[rng.integers(len(escrows))], wallet, amount)
            elif escrows:
                ledger.refund(escrows[rng.integers(len(escrows))])
        except (InsufficientFundsError, InsufficientEscrowError):
            pass
        assert ledger.total_supply() == ledger.initial_supply
    assert all(ledger.balance_of(wallet) >= 0 for wallet in wallets)
    assert all(escrow.balance >= 0 for escrow in escrows)


def test_dump_load_and_verify(ledger, tmp_path):
    for gas in (60, 50, 30):
        ledger.submit_tx(_tx(gas))
    ledger.mine_pending()
    path = tmp_path / "ledger.json"
    ledger.dump(path)

    blocks = load_chain(path)
    assert blocks == list(ledger.chain)
    check_chain(blocks)
    assert json.loads(path.read_text())["head_hash"] == ledger.head_hash.hex()


@pytest.mark.parametrize(
    ("field", "value"),
    [("gas_used", 61), ("round", 7), ("kind", "Finalize")],
)
def test_tampered_transaction_breaks_the_chain(ledger, tmp_path, field, value):
    for gas in (60, 50):
        ledger.submit_tx(_tx(gas))
    ledger.mine_pending()
    path = tmp_path / "ledger.json"
    ledger.dump(path)

    document = json.loads(path.read_text())
    document["blocks"][0]["txs"][0][field] = value
    path.write_text(json.dumps(document))
    assert not verify_chain(load_chain(path))


def test_reordered_blocks_break_the_chain(ledger):
    for gas in (60, 50):
        ledger.submit_tx(_tx(gas))
    ledger.mine_pending()
    blocks = list(ledger.chain)
    with pytest.raises(LedgerVerificationError):
        check_chain(blocks[::-1])


def test_unreadable_dump(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(LedgerVerificationError):
        load_chain(path)


def test_commitment_verifies_the_committed_groups():
    groups = [TOY_DATA, TOY_DATA.subset([0, 1])]
    commitment = commit_test_data(groups, b"seed")
    assert verify_commitment(groups, commitment)
    assert not verify_commitment(groups[::-1], commitment)
    assert not verify_commitment(groups[:1], commitment)
    assert commitment.index_seed_hash == sha256(b"seed")
    with pytest.raises(CommitmentError):
        commit_test_data([], b"seed")


def test_any_single_bit_flip_is_detected():
    rng = np.random.default_rng(11)
    commitment = commit_test_data([TOY_DATA], b"seed")
    for _ in range(100):
        bits = TOY_DATA.features.copy().view(np.uint64)
        bits.flat[rng.integers(bits.size)] ^= np.uint64(1) << np.uint64(rng.integers(64))
        tampered = Dataset(bits.view(np.float64), TOY_DATA.labels, TOY_DATA.class_count)
        assert not verify_commitment([tampered], commitment)


def test_label_change_is_detected():
    commitment = commit_test_data([TOY_DATA], b"seed")
    relabelled = TOY_DATA.with_labels([1, 1, 0, 1])
    assert not verify_commitment([relabelled], commitment)
