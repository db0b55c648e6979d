"""A single ledger node: chain, replayed state, mempool, sealing, storage.

This is the runtime the gateway embeds. It keeps one linear chain (the
networked simulator in ``network`` handles forks); every block it accepts is
fully validated and then folded into the clinical state, so ``state`` is
always exactly the replay of ``chain``.
"""

from __future__ import annotations

import time
from dataclasses import replace

from . import consensus
from .consensus import ConsensusConfig, DposProof, PosProof, PowProof
from .crypto import Identity
from .ehr_records import RegisterUser, ROLE_ADMIN
from .ehr_state import EhrState, Rejection, apply_transaction
from .ledger import (
    Block,
    Chain,
    ChainStore,
    DEFAULT_BLOCK_CAPACITY,
    InvalidTransaction,
    LedgerError,
    Transaction,
    build_block,
    make_transaction,
    validate_block,
    validate_transaction_structure,
)


class NodeError(LedgerError):
    pass


class NotProposerError(NodeError):
    """This node is not entitled to seal the next block."""


def make_genesis(admin: Identity, name: str = "admin", demographics: dict | None = None) -> Block:
    """The deterministic height-0 block: one self-signed admin registration.

    Timestamp fixed at 0 so that every node configured with the same admin
    seed derives a byte-identical genesis block.
    """
    payload = RegisterUser(
        address=admin.address,
        role=ROLE_ADMIN,
        public_key=admin.public_key,
        enc_public_key=admin.enc_public_key,
        name=name,
        demographics=dict(demographics or {}),
    )
    tx = make_transaction(admin, nonce=1, timestamp_ms=0, payload=payload)
    return build_block(
        parent=None,
        transactions=[tx],
        proposer=admin.address,
        proof=None,
        timestamp_ms=0,
        resolver=lambda _addr: None,
    )


def replay_chain(chain: Chain, config: ConsensusConfig,
                 capacity: int = DEFAULT_BLOCK_CAPACITY) -> EhrState:
    """Rebuild state from genesis, re-validating every block on the way.

    Raises NodeError on the first violation; recency of timestamps is not
    re-checked because the wall clock has moved on since sealing.
    """
    state = EhrState()
    prev = None
    for block in chain.blocks:
        violations = validate_block(
            prev_header=prev,
            block=block,
            config=config,
            resolver=state.public_key_of,
            last_nonces=state.nonces,
            now_ms=None,
            capacity=capacity,
        )
        if violations:
            raise NodeError(
                f"replay failed at height {block.header.height}: " + "; ".join(violations)
            )
        for tx in block.transactions:
            try:
                apply_transaction(state, tx, height=block.header.height)
            except Rejection as exc:
                raise NodeError(
                    f"replay failed at height {block.header.height}: "
                    f"tx {tx.tx_id.hex()} rejected ({exc.code})"
                ) from exc
        prev = block.header
    return state


class Node:
    """One validating node with an optional on-disk chain store."""

    def __init__(
        self,
        identity: Identity,
        config: ConsensusConfig,
        genesis: Block,
        data_dir: str | None = None,
        block_capacity: int = DEFAULT_BLOCK_CAPACITY,
        auto_seal: bool = False,
        clock=None,
    ):
        self.identity = identity
        self.config = config
        self.block_capacity = block_capacity
        self.auto_seal = auto_seal
        self.clock = clock or (lambda: int(time.time() * 1000))
        self.store = ChainStore(data_dir) if data_dir else None
        self.mempool: list[Transaction] = []

        if self.store is not None and self.store.exists():
            self.chain = self.store.load()
            if not self.chain.blocks or self.chain.blocks[0] != genesis:
                raise NodeError("stored chain does not start from the expected genesis")
        else:
            self.chain = Chain([genesis])
            if self.store is not None:
                self.store.append_block(genesis)
        self.state = replay_chain(self.chain, config, block_capacity)

    # -- inspection ---------------------------------------------------------

    @property
    def height(self) -> int:
        return self.chain.blocks[-1].header.height

    @property
    def tip_header(self):
        return self.chain.blocks[-1].header

    def next_nonce(self, address: str) -> int:
        pending = sum(1 for tx in self.mempool if tx.signer == address)
        return self.state.last_nonce(address) + pending + 1

    # -- transaction intake -------------------------------------------------

    def submit_transaction(self, tx: Transaction) -> dict:
        """Admit a transaction to the mempool (and seal it when auto-sealing).

        The payload is dry-run against a throwaway copy of state stacked with
        the rest of the mempool, so a transaction that could never apply is
        refused immediately instead of poisoning a block.
        """
        problems = validate_transaction_structure(tx, self.state.public_key_of)
        if problems:
            raise InvalidTransaction(tx.tx_id, "; ".join(problems))
        floor = self.state.last_nonce(tx.signer) + sum(
            1 for pending in self.mempool if pending.signer == tx.signer
        )
        if tx.nonce <= floor:
            raise InvalidTransaction(tx.tx_id, f"nonce {tx.nonce} not above {floor}")
        trial = self.state.clone()
        next_height = self.height + 1
        for pending in self.mempool:
            apply_transaction(trial, pending, height=next_height)
        apply_transaction(trial, tx, height=next_height)  # Rejection propagates
        self.mempool.append(tx)
        receipt = {"tx_id": tx.tx_id.hex(), "height": None, "subject": None}
        if self.auto_seal:
            block = self.seal_block()
            receipt["height"] = block.header.height
            for entry in reversed(self.state.audit_log):
                if entry.tx_id == tx.tx_id:
                    receipt["subject"] = entry.subject
                    break
        return receipt

    # -- sealing ------------------------------------------------------------

    def _make_proof(self, provisional_header) -> consensus.SealProof:
        cfg = self.config
        if cfg.kind == consensus.KIND_POW:
            nonce = consensus.pow_mine(provisional_header, cfg.pow_difficulty_bits)
            return PowProof(nonce=nonce)
        if cfg.kind == consensus.KIND_POS:
            seed = consensus.pos_selection_seed(
                provisional_header.parent, provisional_header.height
            )
            chosen = consensus.pos_select(cfg.stakes, seed)
            if chosen != self.identity.address:
                raise NotProposerError(f"stake selection chose {chosen}")
            return PosProof(proposer=chosen, selection_seed=seed)
        # DPoS: claim the first slot at or after our height that is ours.
        delegates = cfg.delegates
        base = provisional_header.height - 1
        for offset in range(len(delegates)):
            slot = base + offset
            if consensus.dpos_schedule(delegates, slot) == self.identity.address:
                return DposProof(slot_index=slot)
        raise NotProposerError("node is not in the delegate list")

    def seal_block(self, timestamp_ms: int | None = None) -> Block:
        """Seal the mempool into the next block and apply it.

        Transactions that stopped applying since admission (stale after
        earlier ones in the same pool) are silently dropped back out.
        """
        now = self.clock() if timestamp_ms is None else timestamp_ms
        trial = self.state.clone()
        included: list[Transaction] = []
        next_height = self.height + 1
        for tx in self.mempool:
            if len(included) >= self.block_capacity:
                break
            try:
                apply_transaction(trial, tx, height=next_height)
            except Rejection:
                continue
            included.append(tx)

        provisional = build_block(
            parent=self.tip_header,
            transactions=included,
            proposer=self.identity.address,
            proof=None,
            timestamp_ms=now,
            resolver=self.state.public_key_of,
        )
        header = replace(provisional.header, consensus_proof=self._make_proof(provisional.header))
        block = Block(header=header, transactions=provisional.transactions)
        self.receive_block(block, now_ms=now)
        self.mempool = [tx for tx in self.mempool if tx not in included]
        return block

    # -- block intake -------------------------------------------------------

    def receive_block(self, block: Block, now_ms: int | None = None) -> None:
        """Validate a block extending our tip, then fold it into state."""
        violations = validate_block(
            prev_header=self.tip_header,
            block=block,
            config=self.config,
            resolver=self.state.public_key_of,
            last_nonces=self.state.nonces,
            now_ms=now_ms,
            capacity=self.block_capacity,
        )
        if violations:
            raise NodeError("invalid block: " + "; ".join(violations))
        trial = self.state.clone()
        for tx in block.transactions:
            try:
                apply_transaction(trial, tx, height=block.header.height)
            except Rejection as exc:
                raise NodeError(
                    f"invalid block: tx {tx.tx_id.hex()} rejected ({exc.code})"
                ) from exc
        self.chain.append(block)
        self.state = trial
        if self.store is not None:
            self.store.append_block(block)
        self.mempool = [tx for tx in self.mempool if not _in_block(tx, block)]


def _in_block(tx: Transaction, block: Block) -> bool:
    return any(tx.tx_id == other.tx_id for other in block.transactions)
