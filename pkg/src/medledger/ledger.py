"""Transactions, blocks, chains: structure, Merkle commitment, validation.

A transaction's signature covers (signer, nonce, timestamp, payload); its id
is the digest of the whole encoding minus the id itself, so any byte of a
sealed transaction — signature included — is tamper-evident through the
Merkle root. Chains additionally commit to the digest of their last header
(the tip), closing the loop for the final block.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

from . import consensus
from .codec import CodecError, decode, encode, register_record
from .crypto import digest, verify_cached
from .ehr_records import RegisterUser

GENESIS_PARENT = b"\x00" * 32
EMPTY_TX_LIST_LEAF = b"\x00"
DEFAULT_BLOCK_CAPACITY = 256
TIMESTAMP_TOLERANCE_MS = 120_000

# address -> registered Ed25519 public key, or None when unknown
KeyResolver = Callable[[str], bytes | None]


class LedgerError(Exception):
    pass


class InvalidTransaction(LedgerError):
    def __init__(self, tx_id: bytes, reason: str):
        super().__init__(f"invalid transaction {tx_id.hex()}: {reason}")
        self.tx_id = tx_id
        self.reason = reason


@register_record
@dataclass(frozen=True)
class Transaction:
    tx_id: bytes
    signer: str
    nonce: int
    timestamp_ms: int
    payload: Any
    signature: bytes


@register_record
@dataclass(frozen=True)
class BlockHeader:
    height: int
    parent: bytes
    merkle_root: bytes
    timestamp_ms: int
    proposer: str
    consensus_proof: Any


@register_record
@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: list[Transaction]


def tx_signing_bytes(signer: str, nonce: int, timestamp_ms: int, payload: Any) -> bytes:
    return encode([signer, nonce, timestamp_ms, payload])


def compute_tx_id(
    signer: str, nonce: int, timestamp_ms: int, payload: Any, signature: bytes
) -> bytes:
    return digest(encode([signer, nonce, timestamp_ms, payload, signature]))


def make_transaction(identity, nonce: int, timestamp_ms: int, payload: Any) -> Transaction:
    """Sign and seal a transaction for the given identity."""
    from .crypto import sign  # local import keeps module load order flexible

    signature = sign(identity, tx_signing_bytes(identity.address, nonce, timestamp_ms, payload))
    return Transaction(
        tx_id=compute_tx_id(identity.address, nonce, timestamp_ms, payload, signature),
        signer=identity.address,
        nonce=nonce,
        timestamp_ms=timestamp_ms,
        payload=payload,
        signature=signature,
    )


def header_digest(header: BlockHeader) -> bytes:
    return digest(encode(header))


def merkle_root_of_ids(leaf_ids: Sequence[bytes]) -> bytes:
    """Binary Merkle tree; odd levels duplicate the last node.

    The empty list hashes a single 0x00 sentinel byte so an empty block still
    has a well-defined commitment.
    """
    if not leaf_ids:
        return digest(EMPTY_TX_LIST_LEAF)
    level = list(leaf_ids)
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [digest(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def merkle_root(transactions: Sequence[Transaction]) -> bytes:
    return merkle_root_of_ids([tx.tx_id for tx in transactions])


def resolve_signer_key(tx: Transaction, resolver: KeyResolver) -> bytes | None:
    """Registered key for the signer; self-registrations carry their own key.

    A RegisterUser transaction from a not-yet-registered address is verified
    against the key embedded in its payload, which must hash to the signer
    address — that is what makes self-registration self-authenticating.
    """
    known = resolver(tx.signer)
    if known is not None:
        return known
    if isinstance(tx.payload, RegisterUser) and tx.payload.address == tx.signer:
        from .crypto import address_from_public_key

        if address_from_public_key(tx.payload.public_key) == tx.signer:
            return tx.payload.public_key
    return None


def validate_transaction_structure(tx: Transaction, resolver: KeyResolver) -> list[str]:
    """Signature and id consistency; no chain context involved."""
    violations = []
    expected_id = compute_tx_id(tx.signer, tx.nonce, tx.timestamp_ms, tx.payload, tx.signature)
    if tx.tx_id != expected_id:
        violations.append(f"tx-id-mismatch: {tx.tx_id.hex()}")
    if tx.nonce < 1:
        violations.append(f"tx-nonce-not-positive: {tx.tx_id.hex()}")
    key = resolve_signer_key(tx, resolver)
    if key is None:
        violations.append(f"tx-signer-unknown: {tx.signer} in {tx.tx_id.hex()}")
    elif not verify_cached(
        key, tx_signing_bytes(tx.signer, tx.nonce, tx.timestamp_ms, tx.payload), tx.signature
    ):
        violations.append(f"tx-signature-invalid: {tx.tx_id.hex()}")
    return violations


def build_block(
    parent: BlockHeader | None,
    transactions: Sequence[Transaction],
    proposer: str,
    proof: Any,
    timestamp_ms: int,
    resolver: KeyResolver,
) -> Block:
    """Assemble a sealed block over pre-validated transactions.

    Any transaction failing structural validation is rejected by id before
    anything is built.
    """
    for tx in transactions:
        problems = validate_transaction_structure(tx, resolver)
        if problems:
            raise InvalidTransaction(tx.tx_id, "; ".join(problems))
    if parent is None:
        height, parent_digest = 0, GENESIS_PARENT
    else:
        height, parent_digest = parent.height + 1, header_digest(parent)
    header = BlockHeader(
        height=height,
        parent=parent_digest,
        merkle_root=merkle_root(transactions),
        timestamp_ms=timestamp_ms,
        proposer=proposer,
        consensus_proof=proof,
    )
    return Block(header=header, transactions=list(transactions))


def validate_block(
    prev_header: BlockHeader | None,
    block: Block,
    config: consensus.ConsensusConfig,
    resolver: KeyResolver,
    last_nonces: dict[str, int],
    now_ms: int | None = None,
    capacity: int = DEFAULT_BLOCK_CAPACITY,
) -> list[str]:
    """All rule violations for a block against its parent context.

    Checks run in order — linkage, height, timestamp, Merkle root, per-tx
    structure and nonce monotonicity, then the consensus seal — and every
    failure is collected rather than stopping at the first. Payload-level
    (clinical state) validity is the state machine's job and is checked when
    the block is applied.

    ``last_nonces`` maps signer address to the highest nonce already on the
    chain below this block; it is not mutated.
    """
    violations: list[str] = []
    header = block.header
    if prev_header is None:
        if header.height != 0:
            violations.append(f"genesis-height: expected 0, got {header.height}")
        if header.parent != GENESIS_PARENT:
            violations.append("genesis-parent: expected all-zero parent")
    else:
        if header.parent != header_digest(prev_header):
            violations.append(f"parent-linkage: block {header.height}")
        if header.height != prev_header.height + 1:
            violations.append(
                f"height: expected {prev_header.height + 1}, got {header.height}"
            )
        if now_ms is not None and abs(header.timestamp_ms - now_ms) > TIMESTAMP_TOLERANCE_MS:
            violations.append(f"timestamp-out-of-window: block {header.height}")
    if len(block.transactions) > capacity:
        violations.append(f"capacity-exceeded: {len(block.transactions)} > {capacity}")
    if header.merkle_root != merkle_root(block.transactions):
        violations.append(f"merkle-root-mismatch: block {header.height}")
    seen_nonces = dict(last_nonces)
    for tx in block.transactions:
        violations.extend(validate_transaction_structure(tx, resolver))
        last = seen_nonces.get(tx.signer, 0)
        if tx.nonce <= last:
            violations.append(
                f"nonce-not-increasing: {tx.signer} nonce {tx.nonce} in {tx.tx_id.hex()}"
            )
        else:
            seen_nonces[tx.signer] = tx.nonce
    if prev_header is not None and not consensus.verify_seal(config, header, header.consensus_proof):
        violations.append(f"consensus-seal-invalid: block {header.height}")
    return violations


class Chain:
    """An in-memory chain from genesis; append-only, tip-committed."""

    def __init__(self, blocks: Iterable[Block] = ()):
        self.blocks: list[Block] = []
        self._by_digest: dict[bytes, int] = {}
        for block in blocks:
            self.append(block)

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> bytes:
        if not self.blocks:
            return GENESIS_PARENT
        return header_digest(self.blocks[-1].header)

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def append(self, block: Block) -> None:
        self.blocks.append(block)
        self._by_digest[header_digest(block.header)] = len(self.blocks) - 1

    def block_index(self, block_digest: bytes) -> int | None:
        return self._by_digest.get(block_digest)

    def has_tx(self, tx_id: bytes) -> bool:
        return any(tx.tx_id == tx_id for b in self.blocks for tx in b.transactions)


def fork_choice(candidates: Sequence[Chain]) -> Chain:
    """Longest valid chain; ties go to the lexicographically smaller tip."""
    if not candidates:
        raise LedgerError("fork_choice requires at least one candidate")
    return min(candidates, key=lambda c: (-len(c), c.tip))


# ---------------------------------------------------------------------------
# Serialization and the append-only store
# ---------------------------------------------------------------------------


def serialize_chain(chain: Chain) -> bytes:
    """Length-prefixed block frames followed by the 32-byte tip digest."""
    out = bytearray()
    for block in chain.blocks:
        frame = encode(block)
        out += struct.pack(">I", len(frame))
        out += frame
    out += chain.tip
    return bytes(out)


def deserialize_chain(data: bytes) -> Chain:
    """Parse serialized bytes back to a chain, checking the tip commitment."""
    if len(data) < 32:
        raise CodecError("serialized chain shorter than a tip digest")
    body, tip = data[:-32], data[-32:]
    blocks: list[Block] = []
    pos = 0
    while pos < len(body):
        if pos + 4 > len(body):
            raise CodecError(f"truncated block frame at offset {pos}")
        (length,) = struct.unpack(">I", body[pos : pos + 4])
        pos += 4
        if pos + length > len(body):
            raise CodecError(f"block frame overruns input at offset {pos}")
        block = decode(body[pos : pos + length])
        if not isinstance(block, Block):
            raise CodecError("frame did not decode to a block")
        blocks.append(block)
        pos += length
    chain = Chain(blocks)
    if chain.tip != tip:
        raise CodecError("tip digest does not match last header")
    return chain


class ChainStore:
    """Append-only block log on disk plus a tip commitment file."""

    BLOCKS_FILE = "chain.blocks"
    TIP_FILE = "chain.tip"

    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)
        self._blocks_path = os.path.join(data_dir, self.BLOCKS_FILE)
        self._tip_path = os.path.join(data_dir, self.TIP_FILE)

    def exists(self) -> bool:
        return os.path.exists(self._blocks_path)

    def append_block(self, block: Block) -> None:
        frame = encode(block)
        with open(self._blocks_path, "ab") as fh:
            fh.write(struct.pack(">I", len(frame)))
            fh.write(frame)
        with open(self._tip_path, "wb") as fh:
            fh.write(header_digest(block.header))

    def load(self) -> Chain:
        with open(self._blocks_path, "rb") as fh:
            body = fh.read()
        with open(self._tip_path, "rb") as fh:
            tip = fh.read()
        return deserialize_chain(body + tip)

    def rewrite(self, chain: Chain) -> None:
        """Replace the stored chain; only chain sync reorgs use this."""
        tmp = self._blocks_path + ".tmp"
        with open(tmp, "wb") as fh:
            for block in chain.blocks:
                frame = encode(block)
                fh.write(struct.pack(">I", len(frame)))
                fh.write(frame)
        os.replace(tmp, self._blocks_path)
        with open(self._tip_path, "wb") as fh:
            fh.write(chain.tip)
