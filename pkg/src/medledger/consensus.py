"""Pluggable consensus engines: proof of work, proof of stake, delegated PoS.

Engines are pure functions of their configuration. PoW does a leading-zero-bit
nonce search over the header bytes; PoS picks the proposer from the stake map
by hashing a seed tied to the parent block; DPoS walks a fixed delegate list
round robin by slot index.

Block cadence at desk scale is wall-clock-compressed: each kind has a target
interval (PoW ~10 min, PoS ~1 min, DPoS ~30 s) divided by the configured
``time_compression``, so simulations preserve orderings rather than minutes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .codec import encode, register_record
from .crypto import digest

KIND_POW = "pow"
KIND_POS = "pos"
KIND_DPOS = "dpos"
KINDS = (KIND_POW, KIND_POS, KIND_DPOS)

# Table-style target block intervals before compression (milliseconds).
BASE_INTERVAL_MS = {
    KIND_POW: 600_000,
    KIND_POS: 60_000,
    KIND_DPOS: 30_000,
}

MAX_DIFFICULTY_BITS = 32


class ConsensusConfigError(ValueError):
    """Invalid or inconsistent consensus configuration."""


@dataclass(frozen=True)
class ConsensusConfig:
    kind: str
    pow_difficulty_bits: int = 8
    stakes: dict[str, int] = field(default_factory=dict)
    delegates: tuple[str, ...] = ()
    slot_duration_ms: int = 0  # 0 means the kind's base interval
    time_compression: float = 100.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConsensusConfigError(f"unknown consensus kind: {self.kind!r}")
        if not 0 <= self.pow_difficulty_bits <= MAX_DIFFICULTY_BITS:
            raise ConsensusConfigError(
                f"pow_difficulty_bits out of range: {self.pow_difficulty_bits}"
            )
        if self.slot_duration_ms < 0:
            raise ConsensusConfigError("slot_duration_ms must be positive")
        if self.time_compression <= 0:
            raise ConsensusConfigError("time_compression must be positive")
        if self.kind == KIND_POS:
            if not self.stakes or sum(self.stakes.values()) <= 0:
                raise ConsensusConfigError("PoS requires total stake > 0")
            if any(v < 0 for v in self.stakes.values()):
                raise ConsensusConfigError("stakes must be non-negative")
        if self.kind == KIND_DPOS and not self.delegates:
            raise ConsensusConfigError("DPoS requires a non-empty delegate list")

    def interval_ms(self) -> int:
        """Effective block interval after time compression, at least 1 ms."""
        base = self.slot_duration_ms or BASE_INTERVAL_MS[self.kind]
        return max(1, round(base / self.time_compression))


@register_record
@dataclass(frozen=True)
class PowProof:
    nonce: int


@register_record
@dataclass(frozen=True)
class PosProof:
    proposer: str
    selection_seed: bytes


@register_record
@dataclass(frozen=True)
class DposProof:
    slot_index: int


SealProof = PowProof | PosProof | DposProof


def leading_zero_bits(data: bytes) -> int:
    bits = 0
    for byte in data:
        if byte == 0:
            bits += 8
            continue
        mask = 0x80
        while mask and not byte & mask:
            bits += 1
            mask >>= 1
        break
    return bits


def _pow_seal_bytes(header, nonce: int) -> bytes:
    return encode(
        [
            header.height,
            header.parent,
            header.merkle_root,
            header.timestamp_ms,
            header.proposer,
            nonce,
        ]
    )


def pow_mine(header, difficulty_bits: int, start_nonce: int = 0) -> int:
    """Search nonces from start_nonce until the seal digest clears the bar.

    Unbounded by design; callers keep difficulty small enough to terminate.
    """
    nonce = start_nonce
    while True:
        if leading_zero_bits(digest(_pow_seal_bytes(header, nonce))) >= difficulty_bits:
            return nonce
        nonce += 1


def pow_verify(header, nonce: int, difficulty_bits: int) -> bool:
    return leading_zero_bits(digest(_pow_seal_bytes(header, nonce))) >= difficulty_bits


def pos_selection_seed(parent_digest: bytes, height: int) -> bytes:
    return digest(parent_digest + height.to_bytes(8, "big"))


def pos_select(stakes: dict[str, int], seed: bytes) -> str:
    """Stake-proportional choice, deterministic in the seed.

    The seed hash picks a point on [0, total); addresses own consecutive
    intervals sized by stake, walked in sorted-address order.
    """
    total = sum(stakes.values())
    if total <= 0:
        raise ConsensusConfigError("total stake must be positive")
    point = int.from_bytes(digest(seed), "big") % total
    cumulative = 0
    chosen = None
    for address in sorted(stakes):
        stake = stakes[address]
        if stake <= 0:
            continue
        cumulative += stake
        if point < cumulative:
            chosen = address
            break
    assert chosen is not None
    return chosen


def dpos_schedule(delegates, slot_index: int) -> str:
    """Strict round robin over the delegate list."""
    if not delegates:
        raise ConsensusConfigError("delegate list is empty")
    if slot_index < 0:
        raise ValueError(f"slot_index must be non-negative: {slot_index}")
    return delegates[slot_index % len(delegates)]


def verify_seal(config: ConsensusConfig, header, proof: SealProof) -> bool:
    """Check a header's seal under the configured engine.

    A proof variant that does not match the configured kind fails verification
    rather than raising.
    """
    if config.kind == KIND_POW:
        if not isinstance(proof, PowProof):
            return False
        return pow_verify(header, proof.nonce, config.pow_difficulty_bits)
    if config.kind == KIND_POS:
        if not isinstance(proof, PosProof):
            return False
        if header.height < 1:  # sealed blocks start at 1; also keeps the seed total
            return False
        expected_seed = pos_selection_seed(header.parent, header.height)
        if proof.selection_seed != expected_seed:
            return False
        selected = pos_select(config.stakes, expected_seed)
        return proof.proposer == selected and header.proposer == selected
    if config.kind == KIND_DPOS:
        if not isinstance(proof, DposProof):
            return False
        if proof.slot_index < 0:
            return False
        return header.proposer == dpos_schedule(config.delegates, proof.slot_index)
    return False
