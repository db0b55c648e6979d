"""medledger: a permissioned ledger for electronic health records."""

from .codec import decode, encode
from .consensus import ConsensusConfig
from .crypto import Identity, digest, generate_identity
from .ledger import Block, BlockHeader, Chain, Transaction, make_transaction
from .node import Node, make_genesis

__version__ = "0.1.0"

__all__ = [
    "Block",
    "BlockHeader",
    "Chain",
    "ConsensusConfig",
    "Identity",
    "Node",
    "Transaction",
    "__version__",
    "decode",
    "digest",
    "encode",
    "generate_identity",
    "make_genesis",
    "make_transaction",
]
