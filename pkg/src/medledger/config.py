"""YAML node configuration: strict keys, helpful errors.

Every key the loader does not know is an error naming the key — a typo in a
consensus parameter should never silently fall back to a default.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import yaml

from .consensus import (
    ConsensusConfig,
    ConsensusConfigError,
    KIND_DPOS,
    KIND_POS,
    KINDS,
)
from .crypto import generate_identity
from .ledger import DEFAULT_BLOCK_CAPACITY


class ConfigError(ValueError):
    pass


@dataclass
class NodeConfig:
    data_dir: str = "./medledger-data"
    listen: str = "127.0.0.1:8440"
    keystore: str | None = None  # default: <data_dir>/keystore.json
    peers: list[str] = field(default_factory=list)
    node_seed: str = "node-1"
    admin_seed: str = "demo-admin"
    block_capacity: int = DEFAULT_BLOCK_CAPACITY
    consensus: ConsensusConfig | None = None

    @property
    def keystore_path(self) -> str:
        return self.keystore or os.path.join(self.data_dir, "keystore.json")

    @property
    def listen_host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        try:
            return host or "127.0.0.1", int(port)
        except ValueError:
            raise ConfigError(f"listen is not host:port: {self.listen!r}") from None


_TOP_KEYS = {
    "data_dir", "listen", "keystore", "peers", "node_seed", "admin_seed",
    "block_capacity", "consensus",
}
_CONSENSUS_KEYS = {
    "kind", "difficulty_bits", "stakes", "delegates", "slot_ms", "time_compression",
}


def _consensus_from_mapping(section: dict, node_address: str) -> ConsensusConfig:
    for key in section:
        if key not in _CONSENSUS_KEYS:
            raise ConfigError(f"unknown config key: consensus.{key}")
    kind = section.get("kind", KIND_DPOS)
    stakes = dict(section.get("stakes") or {})
    delegates = list(section.get("delegates") or [])
    # Single-node convenience: an empty proposer set means "this node".
    if kind == KIND_POS and not stakes:
        stakes = {node_address: 1}
    if kind == KIND_DPOS and not delegates:
        delegates = [node_address]
    try:
        return ConsensusConfig(
            kind=kind,
            pow_difficulty_bits=int(section.get("difficulty_bits", 8)),
            stakes={str(a): int(v) for a, v in stakes.items()},
            delegates=tuple(str(a) for a in delegates),
            slot_duration_ms=int(section.get("slot_ms", 0)),
            time_compression=float(section.get("time_compression", 100.0)),
        )
    except ConsensusConfigError as exc:
        raise ConfigError(f"consensus section invalid: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"consensus section has a malformed value: {exc}") from None


def load_config(path: str) -> NodeConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown config key: {key}")
    config = NodeConfig(
        data_dir=str(raw.get("data_dir", NodeConfig.data_dir)),
        listen=str(raw.get("listen", NodeConfig.listen)),
        keystore=raw.get("keystore"),
        peers=[str(p) for p in raw.get("peers") or []],
        node_seed=str(raw.get("node_seed", NodeConfig.node_seed)),
        admin_seed=str(raw.get("admin_seed", NodeConfig.admin_seed)),
        block_capacity=int(raw.get("block_capacity", DEFAULT_BLOCK_CAPACITY)),
    )
    section = raw.get("consensus") or {}
    if not isinstance(section, dict):
        raise ConfigError("consensus section must be a mapping")
    kind = section.get("kind", KIND_DPOS)
    if kind not in KINDS:
        raise ConfigError(f"consensus.kind must be one of {'/'.join(KINDS)}, got {kind!r}")
    node_address = generate_identity(config.node_seed).address
    config.consensus = _consensus_from_mapping(section, node_address)
    return config


def resolve_config_path(cli_value: str | None) -> str:
    """The MEDLEDGER_CONFIG environment variable wins over --config."""
    env = os.environ.get("MEDLEDGER_CONFIG")
    if env:
        return env
    if cli_value:
        return cli_value
    raise ConfigError("no config given: pass --config or set MEDLEDGER_CONFIG")
