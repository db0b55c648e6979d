"""Merkle commitments, block validation, fork choice, and chain persistence."""

import dataclasses
import hashlib

import pytest
from hypothesis import given, settings, strategies as st

from medledger.codec import CodecError
from medledger.consensus import ConsensusConfig, PowProof, pow_mine
from medledger.crypto import digest, generate_identity
from medledger.ehr_records import RegisterUser, ROLE_PATIENT, UpdateProfile
from medledger.ledger import (
    Chain,
    ChainStore,
    GENESIS_PARENT,
    LedgerError,
    build_block,
    compute_tx_id,
    deserialize_chain,
    fork_choice,
    header_digest,
    make_transaction,
    merkle_root_of_ids,
    serialize_chain,
    validate_block,
    validate_transaction_structure,
)
from medledger.node import make_genesis, replay_chain


def merkle_oracle(leaves):
    """Independent recursive Merkle root.

    Leaves are transaction ids and enter the tree as-is; odd levels duplicate
    the last node; the empty list hashes a single 0x00 sentinel byte.
    """
    if not leaves:
        return hashlib.sha256(b"\x00").digest()
    if len(leaves) == 1:
        return leaves[0]
    if len(leaves) % 2:
        leaves = list(leaves) + [leaves[-1]]
    parents = [hashlib.sha256(leaves[i] + leaves[i + 1]).digest()
               for i in range(0, len(leaves), 2)]
    return merkle_oracle(parents)


class TestMerkle:
    def test_empty_list(self):
        assert merkle_root_of_ids([]) == merkle_oracle([])
        assert merkle_root_of_ids([]) == digest(b"\x00")

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 7, 8, 15, 16, 33])
    def test_matches_oracle(self, n):
        leaves = [f"leaf-{i}".encode() for i in range(n)]
        assert merkle_root_of_ids(leaves) == merkle_oracle(leaves)

    def test_leaf_order_matters(self):
        a = merkle_root_of_ids([b"x", b"y"])
        b = merkle_root_of_ids([b"y", b"x"])
        assert a != b

    @given(st.lists(st.binary(min_size=1, max_size=40), max_size=20))
    def test_oracle_property(self, leaves):
        assert merkle_root_of_ids(leaves) == merkle_oracle(leaves)


def _registration(identity, nonce=1, ts=1_000):
    return make_transaction(identity, nonce, ts, RegisterUser(
        address=identity.address, role=ROLE_PATIENT,
        public_key=identity.public_key, enc_public_key=identity.enc_public_key,
        name=identity.address[:8], demographics={},
    ))


@pytest.fixture
def small_chain():
    """Genesis + 3 blocks of one registration each, PoW-sealed at 4 bits."""
    admin = generate_identity("ledger-admin")
    config = ConsensusConfig(kind="pow", pow_difficulty_bits=4)
    chain = Chain([make_genesis(admin)])
    keys = {admin.address: admin.public_key}
    for i in range(3):
        who = generate_identity(f"ledger-user-{i}")
        keys[who.address] = who.public_key
        tx = _registration(who, ts=1_000 + i)
        parent = chain.blocks[-1]
        provisional = build_block(
            parent=parent.header, transactions=[tx], proposer=admin.address,
            proof=None, timestamp_ms=parent.header.timestamp_ms + 1000,
            resolver=keys.get,
        )
        nonce = pow_mine(provisional.header, config.pow_difficulty_bits)
        block = dataclasses.replace(
            provisional,
            header=dataclasses.replace(provisional.header,
                                       consensus_proof=PowProof(nonce=nonce)),
        )
        chain = Chain(chain.blocks + [block])
    return chain, config, keys


class TestBlockValidation:
    def _resolver(self, keys):
        return lambda address: keys.get(address)

    def test_valid_chain_passes(self, small_chain):
        chain, config, keys = small_chain
        for i in range(1, len(chain.blocks)):
            violations = validate_block(
                chain.blocks[i - 1].header, chain.blocks[i], config,
                self._resolver(keys), last_nonces={},
            )
            assert violations == []

    def test_bad_merkle_root_reported(self, small_chain):
        chain, config, keys = small_chain
        block = chain.blocks[1]
        forged = dataclasses.replace(
            block, header=dataclasses.replace(block.header, merkle_root=b"\x11" * 32))
        violations = validate_block(chain.blocks[0].header, forged, config,
                                    self._resolver(keys), last_nonces={})
        assert any("merkle" in v for v in violations)

    def test_broken_parent_link_reported(self, small_chain):
        chain, config, keys = small_chain
        block = chain.blocks[2]
        forged = dataclasses.replace(
            block, header=dataclasses.replace(block.header, parent=b"\x22" * 32))
        violations = validate_block(chain.blocks[1].header, forged, config,
                                    self._resolver(keys), last_nonces={})
        assert any("parent" in v for v in violations)

    def test_all_violations_reported_not_just_first(self, small_chain):
        chain, config, keys = small_chain
        block = chain.blocks[1]
        forged = dataclasses.replace(
            block,
            header=dataclasses.replace(
                block.header, parent=b"\x22" * 32, merkle_root=b"\x11" * 32),
        )
        violations = validate_block(chain.blocks[0].header, forged, config,
                                    self._resolver(keys), last_nonces={})
        assert len(violations) >= 2

    def test_tampered_tx_signature_reported(self, small_chain):
        chain, config, keys = small_chain
        block = chain.blocks[1]
        tx = block.transactions[0]
        bad_sig = bytes([tx.signature[0] ^ 1]) + tx.signature[1:]
        forged_tx = dataclasses.replace(tx, signature=bad_sig)
        forged = dataclasses.replace(block, transactions=[forged_tx])
        violations = validate_block(chain.blocks[0].header, forged, config,
                                    self._resolver(keys), last_nonces={})
        assert violations  # signature and/or merkle mismatch — anything but silence

    def test_stale_timestamp_rejected_when_now_given(self, small_chain):
        chain, config, keys = small_chain
        violations = validate_block(
            chain.blocks[0].header, chain.blocks[1], config,
            self._resolver(keys), last_nonces={},
            now_ms=chain.blocks[1].header.timestamp_ms + 10**9,
        )
        assert any("timestamp" in v for v in violations)


class TestTransactionStructure:
    def test_well_formed_passes(self):
        who = generate_identity("tx-user")
        tx = _registration(who)
        problems = validate_transaction_structure(tx, lambda a: who.public_key)
        assert problems == []

    def test_unknown_signer_named(self):
        # self-registrations carry their own key, so use another payload kind
        who = generate_identity("tx-user")
        tx = make_transaction(who, 1, 1_000, UpdateProfile(demographics={"city": "x"}))
        problems = validate_transaction_structure(tx, lambda a: None)
        assert problems and tx.tx_id.hex() in problems[0]

    def test_self_registration_is_self_authenticating(self):
        who = generate_identity("tx-user")
        tx = _registration(who)
        assert validate_transaction_structure(tx, lambda a: None) == []

    def test_wrong_tx_id_reported(self):
        who = generate_identity("tx-user")
        tx = _registration(who)
        forged = dataclasses.replace(tx, tx_id=b"\x00" * 32)
        problems = validate_transaction_structure(forged, lambda a: who.public_key)
        assert problems

    def test_tx_id_is_digest_of_signed_body(self):
        who = generate_identity("tx-user")
        tx = _registration(who)
        assert tx.tx_id == compute_tx_id(tx.signer, tx.nonce, tx.timestamp_ms,
                                         tx.payload, tx.signature)


class TestForkChoice:
    def _chain_of(self, n, salt):
        admin = generate_identity(f"fork-admin-{salt}")
        blocks = [make_genesis(admin)]
        for i in range(n - 1):
            parent = blocks[-1]
            blocks.append(build_block(
                parent=parent.header, transactions=[], proposer=admin.address,
                proof=PowProof(nonce=i), timestamp_ms=1_000 + i,
                resolver=lambda a: None,
            ))
        return Chain(blocks)

    def test_longest_wins(self):
        short, long = self._chain_of(2, "a"), self._chain_of(4, "b")
        assert fork_choice([short, long]) is long

    def test_tie_breaks_to_smaller_tip(self):
        a, b = self._chain_of(3, "a"), self._chain_of(3, "b")
        expected = min((a, b), key=lambda c: c.tip)
        assert fork_choice([a, b]) is expected
        assert fork_choice([b, a]) is expected

    def test_single_candidate(self):
        only = self._chain_of(2, "x")
        assert fork_choice([only]) is only

    def test_empty_candidates_error(self):
        with pytest.raises(LedgerError):
            fork_choice([])

    @settings(deadline=None)
    @given(st.lists(st.tuples(st.integers(2, 6), st.text("ab", min_size=1, max_size=4)),
                    min_size=1, max_size=5, unique=True))
    def test_choice_is_order_independent(self, shapes):
        chains = [self._chain_of(n, salt) for n, salt in shapes]
        pick = fork_choice(chains)
        assert fork_choice(list(reversed(chains))) is pick
        best = max(len(c.blocks) for c in chains)
        assert len(pick.blocks) == best
        assert pick.tip == min(c.tip for c in chains if len(c.blocks) == best)


class TestChainSerialization:
    def test_round_trip(self, small_chain):
        chain, _, _ = small_chain
        restored = deserialize_chain(serialize_chain(chain))
        assert restored.tip == chain.tip
        assert len(restored.blocks) == len(chain.blocks)
        assert restored.blocks[-1] == chain.blocks[-1]

    def test_corrupt_tip_digest_rejected(self, small_chain):
        chain, _, _ = small_chain
        data = bytearray(serialize_chain(chain))
        data[-1] ^= 0xFF
        with pytest.raises(CodecError):
            deserialize_chain(bytes(data))

    def test_truncated_stream_rejected(self, small_chain):
        chain, _, _ = small_chain
        data = serialize_chain(chain)
        with pytest.raises(CodecError):
            deserialize_chain(data[: len(data) // 2])


class TestChainStore:
    def test_persist_and_reload(self, small_chain, tmp_path):
        chain, _, _ = small_chain
        store = ChainStore(str(tmp_path / "chain"))
        store.rewrite(chain)
        reloaded = ChainStore(str(tmp_path / "chain")).load()
        assert reloaded.tip == chain.tip
        assert len(reloaded.blocks) == len(chain.blocks)

    def test_append_block_extends_stored_chain(self, small_chain, tmp_path):
        chain, _, _ = small_chain
        store = ChainStore(str(tmp_path / "chain"))
        store.rewrite(Chain(chain.blocks[:-1]))
        store.append_block(chain.blocks[-1])
        assert ChainStore(str(tmp_path / "chain")).load().tip == chain.tip


class TestReplay:
    def test_replay_rebuilds_state(self, small_chain):
        chain, config, _ = small_chain
        state = replay_chain(chain, config)
        assert len(state.accounts) == 4  # admin + 3 registrations

    def test_replay_names_offending_block(self, small_chain):
        chain, config, _ = small_chain
        block = chain.blocks[2]
        forged = dataclasses.replace(
            block, header=dataclasses.replace(block.header, merkle_root=b"\x00" * 32))
        bad = Chain(chain.blocks[:2] + [forged] + chain.blocks[3:])
        with pytest.raises(Exception) as info:
            replay_chain(bad, config)
        assert "2" in str(info.value)


def test_header_digest_changes_with_any_field(small_chain):
    chain, _, _ = small_chain
    header = chain.blocks[1].header
    base = header_digest(header)
    assert header_digest(dataclasses.replace(header, height=99)) != base
    assert header_digest(dataclasses.replace(header, timestamp_ms=4)) != base
    assert header_digest(dataclasses.replace(header, parent=GENESIS_PARENT)) != base
