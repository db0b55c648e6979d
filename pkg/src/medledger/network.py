"""Gossip, chain sync, and the deterministic network simulator.

Nodes exchange six message kinds over a static full mesh: transactions and
blocks are announced and re-announced once per node, and a node that learns
of a taller tip pulls the missing blocks and resolves with fork choice.

The simulator is a single-threaded event loop over (time, seq)-keyed events
with one seeded RNG, so a (SimConfig, workload, ConsensusConfig) triple
always yields the same trace, byte for byte. A transaction counts as
*committed* the moment a strict majority of all configured nodes — offline
ones included in the denominator — hold it on their chains; that is what
makes "half the nodes down" the exact availability cliff.
"""

from __future__ import annotations

import csv
import heapq
import io
import random
from dataclasses import dataclass, field, replace

from . import consensus
from .codec import encode, register_record
from .consensus import ConsensusConfig, DposProof, PosProof, PowProof
from .crypto import Identity, digest, generate_identity
from .ehr_records import RegisterUser, ROLE_PATIENT
from .ehr_state import EhrState, Rejection, apply_transaction
from .ledger import (
    Block,
    Chain,
    DEFAULT_BLOCK_CAPACITY,
    Transaction,
    build_block,
    fork_choice,
    header_digest,
    make_transaction,
    validate_block,
    validate_transaction_structure,
)
from .node import make_genesis, replay_chain

# --------------------------------------------------------------------------
# Messages
# --------------------------------------------------------------------------


@register_record
@dataclass(frozen=True)
class AnnounceTx:
    tx: Transaction


@register_record
@dataclass(frozen=True)
class AnnounceBlock:
    block: Block


@register_record
@dataclass(frozen=True)
class RequestTip:
    pass


@register_record
@dataclass(frozen=True)
class Tip:
    height: int
    tip_digest: bytes


@register_record
@dataclass(frozen=True)
class RequestBlocks:
    from_height: int


@register_record
@dataclass(frozen=True)
class Blocks:
    blocks: list[Block]


Message = AnnounceTx | AnnounceBlock | RequestTip | Tip | RequestBlocks | Blocks


def message_digest(msg: Message) -> bytes:
    return digest(encode(msg))


# --------------------------------------------------------------------------
# Configuration and trace
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Bipartition active in [start_ms, end_ms): group vs everyone else."""

    start_ms: int
    end_ms: int
    group: frozenset[int]


@dataclass(frozen=True)
class SimConfig:
    node_count: int = 5
    rng_seed: int = 0
    latency_ms: tuple[int, int] = (5, 50)
    drop_rate: float = 0.0
    partitions: tuple[Partition, ...] = ()
    offline_nodes: frozenset[int] = frozenset()
    max_time_ms: int = 120_000
    block_capacity: int = DEFAULT_BLOCK_CAPACITY

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")
        if not 0 <= self.drop_rate < 1:
            raise ValueError("drop_rate must be in [0, 1)")
        if self.latency_ms[0] < 0 or self.latency_ms[1] < self.latency_ms[0]:
            raise ValueError("latency range must be 0 <= min <= max")
        if any(i < 0 or i >= self.node_count for i in self.offline_nodes):
            raise ValueError("offline node index out of range")


@dataclass
class SimTrace:
    """What happened: the event log plus the aggregate counters."""

    events: list[tuple[int, str, str, str]] = field(default_factory=list)
    delivered: int = 0
    dropped: int = 0
    invalid: int = 0
    submitted: int = 0
    committed: int = 0
    tps: float = 0.0
    mean_latency_ms: float = 0.0
    converged: bool = False
    stalled: bool = False
    end_time_ms: int = 0
    final_heights: dict[int, int] = field(default_factory=dict)
    tip_history: dict[int, list[tuple[int, str]]] = field(default_factory=dict)

    def to_csv(self) -> bytes:
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(["time_ms", "node", "event", "detail"])
        for time_ms, node, event, detail in self.events:
            writer.writerow([time_ms, node, event, detail])
        for name, value in [
            ("delivered", self.delivered),
            ("dropped", self.dropped),
            ("invalid", self.invalid),
            ("submitted", self.submitted),
            ("committed", self.committed),
            ("tps", f"{self.tps:.3f}"),
            ("mean_latency_ms", f"{self.mean_latency_ms:.3f}"),
            ("converged", int(self.converged)),
            ("stalled", int(self.stalled)),
        ]:
            writer.writerow([self.end_time_ms, "-", f"summary_{name}", value])
        return buffer.getvalue().encode()


# Workload items are (inject_time_ms, origin_node_index, transaction).
WorkloadItem = tuple[int, int, Transaction]


def sim_node_identities(count: int) -> list[Identity]:
    return [generate_identity(f"sim-node-{i}".encode()) for i in range(count)]


def default_genesis() -> Block:
    return make_genesis(generate_identity(b"sim-admin"), name="simulation admin")


def make_registration_workload(
    tx_count: int,
    node_count: int,
    offline: frozenset[int] = frozenset(),
    start_ms: int = 1,
    spacing_ms: int = 1,
) -> list[WorkloadItem]:
    """Independent self-registrations, round-robined over the online nodes.

    Each transaction has its own fresh signer at nonce 1, so items are valid
    in any order and any subset — ideal throughput filler. Workload aimed at
    an offline node would sit undelivered forever, so origins skip them.
    """
    online = [i for i in range(node_count) if i not in offline]
    if not online:
        raise ValueError("workload needs at least one online node")
    items: list[WorkloadItem] = []
    for i in range(tx_count):
        who = generate_identity(f"workload-{i}".encode())
        payload = RegisterUser(
            address=who.address,
            role=ROLE_PATIENT,
            public_key=who.public_key,
            enc_public_key=who.enc_public_key,
            name=f"patient {i}",
            demographics={},
        )
        tx = make_transaction(who, nonce=1, timestamp_ms=start_ms + i * spacing_ms,
                              payload=payload)
        items.append((start_ms + i * spacing_ms, online[i % len(online)], tx))
    return items


# --------------------------------------------------------------------------
# Simulator
# --------------------------------------------------------------------------


class _SimNode:
    """One simulated node: chain + incrementally maintained state."""

    def __init__(self, idx: int, identity: Identity, genesis: Block,
                 config: ConsensusConfig, capacity: int):
        self.idx = idx
        self.identity = identity
        self.chain = Chain([genesis])
        self.state = replay_chain(self.chain, config, capacity)
        self.mempool: dict[bytes, Transaction] = {}
        self.chain_tx_ids: set[bytes] = {
            tx.tx_id for block in self.chain.blocks for tx in block.transactions
        }
        self.sent_digests: set[bytes] = set()
        self.mining_tip: bytes | None = None  # tip a pending mine event was armed for

    @property
    def height(self) -> int:
        return self.chain.blocks[-1].header.height

    @property
    def tip_header(self):
        return self.chain.blocks[-1].header

    def knows_tx(self, tx_id: bytes) -> bool:
        return tx_id in self.mempool or tx_id in self.chain_tx_ids


class Simulation:
    """Deterministic discrete-event run of N nodes under one consensus rule.

    Use ``run_simulation`` unless a test needs to poke at the internals.
    """

    def __init__(
        self,
        sim_config: SimConfig,
        consensus_config: ConsensusConfig,
        workload: list[WorkloadItem] = (),
        genesis: Block | None = None,
        identities: list[Identity] | None = None,
    ):
        self.cfg = sim_config
        self.consensus = consensus_config
        self.rng = random.Random(sim_config.rng_seed)
        self.now = 0
        self._queue: list[tuple[int, int, tuple]] = []
        self._seq = 0
        self.trace = SimTrace()
        genesis = genesis or default_genesis()
        identities = identities or sim_node_identities(sim_config.node_count)
        self.nodes = [
            _SimNode(i, identities[i], genesis, consensus_config, sim_config.block_capacity)
            for i in range(sim_config.node_count)
        ]
        self.online = [i for i in range(sim_config.node_count)
                       if i not in sim_config.offline_nodes]
        self.workload = list(workload)
        self._inject_times: dict[bytes, int] = {}
        self._commit_times: dict[bytes, int] = {}
        self._holders: dict[bytes, set[int]] = {}
        self._majority = sim_config.node_count // 2 + 1
        for node in self.nodes:
            self.trace.tip_history[node.idx] = [(0, node.chain.tip.hex())]

    # -- event plumbing -----------------------------------------------------

    def _push(self, at_ms: int, event: tuple) -> None:
        heapq.heappush(self._queue, (at_ms, self._seq, event))
        self._seq += 1

    def _log(self, node: int | str, event: str, detail: str) -> None:
        self.trace.events.append((self.now, str(node), event, detail))

    def _partitioned(self, a: int, b: int) -> bool:
        for part in self.cfg.partitions:
            if part.start_ms <= self.now < part.end_ms:
                if (a in part.group) != (b in part.group):
                    return True
        return False

    def _enqueue_delivery(self, src: int, dst: int, msg: Message) -> None:
        if dst in self.cfg.offline_nodes:
            return
        if self._partitioned(src, dst):
            self.trace.dropped += 1
            return
        if self.cfg.drop_rate and self.rng.random() < self.cfg.drop_rate:
            self.trace.dropped += 1
            return
        delay = self.rng.randint(*self.cfg.latency_ms)
        self._push(self.now + delay, ("deliver", src, dst, msg))

    def broadcast(self, src: int, msg: Message) -> None:
        """Offer msg to every peer; repeat digests from src are suppressed."""
        if src in self.cfg.offline_nodes:
            return
        dig = message_digest(msg)
        node = self.nodes[src]
        if dig in node.sent_digests:
            return
        node.sent_digests.add(dig)
        for dst in range(self.cfg.node_count):
            if dst != src:
                self._enqueue_delivery(src, dst, msg)

    def send(self, src: int, dst: int, msg: Message) -> None:
        if src in self.cfg.offline_nodes:
            return
        self._enqueue_delivery(src, dst, msg)

    # -- chain bookkeeping --------------------------------------------------

    def _note_tip(self, node: _SimNode) -> None:
        self.trace.tip_history[node.idx].append((self.now, node.chain.tip.hex()))

    def _track_commitment(self, node: _SimNode, tx_ids) -> None:
        for tx_id in tx_ids:
            if tx_id in self._commit_times:
                continue
            holders = self._holders.setdefault(tx_id, set())
            holders.add(node.idx)
            if tx_id in self._inject_times and len(holders) >= self._majority:
                self._commit_times[tx_id] = self.now
                self.trace.committed += 1
                self._log(node.idx, "tx_committed", tx_id.hex())

    def _rebuild_holding(self, node: _SimNode) -> None:
        """After a reorg the node's holdings are whatever the new chain says."""
        new_ids = {tx.tx_id for block in node.chain.blocks for tx in block.transactions}
        for tx_id in node.chain_tx_ids - new_ids:
            holders = self._holders.get(tx_id)
            if holders is not None and tx_id not in self._commit_times:
                holders.discard(node.idx)
        node.chain_tx_ids = new_ids
        self._track_commitment(node, new_ids)

    def _extend_chain(self, node: _SimNode, block: Block) -> bool:
        """Validate and append a block directly on the node's tip."""
        violations = validate_block(
            prev_header=node.tip_header,
            block=block,
            config=self.consensus,
            resolver=node.state.public_key_of,
            last_nonces=node.state.nonces,
            now_ms=None,
            capacity=self.cfg.block_capacity,
        )
        if violations:
            self.trace.invalid += 1
            self._log(node.idx, "block_rejected", violations[0])
            return False
        trial = node.state.clone()
        try:
            for tx in block.transactions:
                apply_transaction(trial, tx, height=block.header.height)
        except Rejection as exc:
            self.trace.invalid += 1
            self._log(node.idx, "block_rejected", f"payload:{exc.code}")
            return False
        node.chain.append(block)
        node.state = trial
        for tx in block.transactions:
            node.chain_tx_ids.add(tx.tx_id)
            node.mempool.pop(tx.tx_id, None)
        self._track_commitment(node, [tx.tx_id for tx in block.transactions])
        self._note_tip(node)
        self._log(node.idx, "block_adopted",
                  f"height={block.header.height} txs={len(block.transactions)}")
        if self.consensus.kind == consensus.KIND_POW:
            self._arm_mining(node)
        return True

    def _adopt_chain(self, node: _SimNode, candidate: Chain) -> bool:
        """Replace the node's chain after fork choice picked the candidate."""
        try:
            new_state = replay_chain(candidate, self.consensus, self.cfg.block_capacity)
        except Exception:
            self.trace.invalid += 1
            self._log(node.idx, "sync_rejected", "candidate chain failed validation")
            return False
        old_ids = set(node.chain_tx_ids)
        old_blocks = list(node.chain.blocks)
        node.chain = candidate
        node.state = new_state
        self._rebuild_holding(node)
        # Transactions orphaned by the reorg go back to the mempool.
        for block in old_blocks:
            for tx in block.transactions:
                if tx.tx_id in old_ids and tx.tx_id not in node.chain_tx_ids:
                    if tx.nonce > node.state.last_nonce(tx.signer):
                        node.mempool.setdefault(tx.tx_id, tx)
        for tx_id in list(node.mempool):
            if tx_id in node.chain_tx_ids:
                del node.mempool[tx_id]
        self._note_tip(node)
        self._log(node.idx, "chain_adopted", f"height={node.height}")
        if self.consensus.kind == consensus.KIND_POW:
            node.mining_tip = None
            self._arm_mining(node)
        return True

    # -- message handling ---------------------------------------------------

    def handle_message(self, dst: int, msg: Message, src: int) -> None:
        node = self.nodes[dst]
        if isinstance(msg, AnnounceTx):
            tx = msg.tx
            if node.knows_tx(tx.tx_id):
                return
            problems = validate_transaction_structure(tx, node.state.public_key_of)
            if problems or tx.nonce <= node.state.last_nonce(tx.signer):
                self.trace.invalid += 1
                return
            node.mempool[tx.tx_id] = tx
            self.broadcast(dst, msg)
            if self.consensus.kind == consensus.KIND_POW:
                self._arm_mining(node)
        elif isinstance(msg, AnnounceBlock):
            block = msg.block
            if block.header.parent == node.chain.tip:
                if self._extend_chain(node, block):
                    self.broadcast(dst, msg)
            elif node.chain.block_index(header_digest(block.header)) is None:
                # Not a direct extension: pull the sender's chain and compare.
                self.send(dst, src, RequestBlocks(from_height=node.height + 1))
        elif isinstance(msg, RequestTip):
            self.send(dst, src, Tip(height=node.height, tip_digest=node.chain.tip))
        elif isinstance(msg, Tip):
            if msg.height > node.height:
                self.send(dst, src, RequestBlocks(from_height=node.height + 1))
            elif msg.height == node.height and msg.tip_digest != node.chain.tip:
                # Same length, different tips: pull to let fork choice decide.
                self.send(dst, src, RequestBlocks(from_height=node.height))
        elif isinstance(msg, RequestBlocks):
            start = max(1, msg.from_height)
            self.send(dst, src, Blocks(blocks=node.chain.blocks[start:]))
        elif isinstance(msg, Blocks):
            if not msg.blocks:
                return
            base_height = msg.blocks[0].header.height
            if base_height > node.height + 1 or base_height < 1:
                self.send(dst, src, RequestBlocks(from_height=1))
                return
            prefix = node.chain.blocks[:base_height]
            if prefix and msg.blocks[0].header.parent != header_digest(prefix[-1].header):
                # Fork below the requested height: fetch the whole chain once.
                self.send(dst, src, RequestBlocks(from_height=1))
                return
            try:
                candidate = Chain(prefix + list(msg.blocks))
            except Exception:
                self.trace.invalid += 1
                return
            best = fork_choice([node.chain, candidate])
            if best is candidate and candidate.tip != node.chain.tip:
                self._adopt_chain(node, candidate)

    # -- proposing ----------------------------------------------------------

    def _build_candidate_txs(self, node: _SimNode) -> list[Transaction]:
        trial = node.state.clone()
        chosen: list[Transaction] = []
        stale: list[bytes] = []
        next_height = node.height + 1
        for tx_id, tx in node.mempool.items():
            if len(chosen) >= self.cfg.block_capacity:
                break
            try:
                apply_transaction(trial, tx, height=next_height)
            except Rejection:
                stale.append(tx_id)
                continue
            chosen.append(tx)
        for tx_id in stale:
            del node.mempool[tx_id]
            self.trace.invalid += 1
        return chosen

    def _seal(self, node: _SimNode, proof_maker) -> None:
        if not node.mempool:
            return
        txs = self._build_candidate_txs(node)
        if not txs:
            return
        provisional = build_block(
            parent=node.tip_header,
            transactions=txs,
            proposer=node.identity.address,
            proof=None,
            timestamp_ms=self.now,
            resolver=node.state.public_key_of,
        )
        header = replace(provisional.header, consensus_proof=proof_maker(provisional.header))
        block = Block(header=header, transactions=provisional.transactions)
        self._log(node.idx, "block_sealed",
                  f"height={block.header.height} txs={len(txs)}")
        if self._extend_chain(node, block):
            self.broadcast(node.idx, AnnounceBlock(block=block))

    def _arm_mining(self, node: _SimNode) -> None:
        if node.idx in self.cfg.offline_nodes or not node.mempool:
            return
        if node.mining_tip == node.chain.tip:
            return
        node.mining_tip = node.chain.tip
        # Per-miner expected solve time scales with the share of hash power
        # present, keeping the network interval near the configured one.
        scale = self.cfg.node_count / max(1, len(self.online))
        delay = max(1, round(self.consensus.interval_ms() * scale
                             * self.rng.uniform(0.8, 1.2)))
        self._push(self.now + delay, ("mined", node.idx, node.chain.tip))

    def _on_mined(self, idx: int, tip_snapshot: bytes) -> None:
        node = self.nodes[idx]
        if node.chain.tip != tip_snapshot:
            return  # a newer mining run was armed when the tip moved
        node.mining_tip = None
        if not node.mempool:
            return
        bits = self.consensus.pow_difficulty_bits

        def proof(header):
            return PowProof(nonce=consensus.pow_mine(header, bits))

        self._seal(node, proof)
        self._arm_mining(node)

    def _on_slot(self, slot_index: int) -> None:
        for idx in self.online:
            node = self.nodes[idx]
            if self.consensus.kind == consensus.KIND_POS:
                seed = consensus.pos_selection_seed(node.chain.tip, node.height + 1)
                if consensus.pos_select(self.consensus.stakes, seed) != node.identity.address:
                    continue

                def proof(header, _seed=seed, _addr=node.identity.address):
                    return PosProof(proposer=_addr, selection_seed=_seed)

            else:  # DPoS: the slot number alone names the proposer
                if consensus.dpos_schedule(self.consensus.delegates, slot_index) \
                        != node.identity.address:
                    continue

                def proof(header, _slot=slot_index):
                    return DposProof(slot_index=_slot)

            self._seal(node, proof)

    # -- main loop ----------------------------------------------------------

    def _all_committed(self) -> bool:
        return self.trace.committed == self.trace.submitted

    def _online_tips_equal(self) -> bool:
        tips = {self.nodes[i].chain.tip for i in self.online}
        return len(tips) <= 1

    def _done(self) -> bool:
        return (
            self._all_committed()
            and self._online_tips_equal()
            and all(not self.nodes[i].mempool for i in self.online)
        )

    def run(self) -> SimTrace:
        interval = self.consensus.interval_ms()
        for at_ms, origin, tx in self.workload:
            self._push(at_ms, ("inject", origin, tx))
            self._inject_times[tx.tx_id] = at_ms
        self.trace.submitted = len(self.workload)
        if self.consensus.kind != consensus.KIND_POW:
            for k in range(1, self.cfg.max_time_ms // interval + 1):
                self._push(k * interval, ("slot", k))
        sync_every = max(1, interval * 2)
        for k in range(1, self.cfg.max_time_ms // sync_every + 1):
            self._push(k * sync_every, ("sync",))

        while self._queue:
            at_ms, _, event = heapq.heappop(self._queue)
            if at_ms > self.cfg.max_time_ms:
                break
            self.now = at_ms
            kind = event[0]
            if kind == "inject":
                _, origin, tx = event
                self._log(origin, "tx_injected", tx.tx_id.hex())
                if origin in self.cfg.offline_nodes:
                    continue
                self.handle_message(origin, AnnounceTx(tx=tx), origin)
            elif kind == "deliver":
                _, src, dst, msg = event
                self.trace.delivered += 1
                self.handle_message(dst, msg, src)
            elif kind == "slot":
                self._on_slot(event[1])
            elif kind == "mined":
                self._on_mined(event[1], event[2])
            elif kind == "sync":
                # Anti-entropy pulse: direct tip probes, outside the gossip
                # dedupe so they repeat every round.
                for idx in self.online:
                    for dst in range(self.cfg.node_count):
                        if dst != idx:
                            self.send(idx, dst, RequestTip())
            if self._done():
                break

        self.trace.end_time_ms = self.now
        self.trace.converged = self._online_tips_equal()
        self.trace.stalled = not self._all_committed()
        self.trace.final_heights = {n.idx: n.height for n in self.nodes}
        latencies = [
            self._commit_times[tx_id] - self._inject_times[tx_id]
            for tx_id in self._commit_times
        ]
        if latencies:
            self.trace.mean_latency_ms = sum(latencies) / len(latencies)
        last_commit = max(self._commit_times.values(), default=0)
        if last_commit > 0:
            self.trace.tps = self.trace.committed / (last_commit / 1000.0)
        return self.trace


def run_simulation(
    sim_config: SimConfig,
    workload: list[WorkloadItem],
    consensus_config: ConsensusConfig,
    genesis: Block | None = None,
    identities: list[Identity] | None = None,
) -> SimTrace:
    """Run to quiescence (or the time limit) and return the trace."""
    sim = Simulation(sim_config, consensus_config, workload,
                     genesis=genesis, identities=identities)
    return sim.run()
