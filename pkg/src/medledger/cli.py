"""Operator command line: run a node, seed demo data, benchmark, export.

Exit status is zero only when everything the subcommand promised actually
happened; any failure (bad config, failed ordering check, rejected
transaction) exits nonzero with a message on stderr.
"""

from __future__ import annotations

import argparse
import sys

from . import consensus as consensus_mod
from .config import ConfigError, NodeConfig, load_config, resolve_config_path
from .consensus import ConsensusConfig, KIND_DPOS, KIND_POS, KIND_POW
from .crypto import generate_identity
from .ehr_records import (
    AddLabDefinition,
    AddMedication,
    LabParameterSpec,
    RegisterUser,
    RequestAppointment,
    ROLE_DOCTOR,
    ROLE_PATIENT,
    SetSystemStart,
    SetUserStatus,
    STATUS_ACTIVE,
)
from .exporter import DATASET_KINDS, EXPORT_FORMATS, ExportError, build_dataset, export
from .gateway import Keystore, create_app
from .ledger import make_transaction
from .network import (
    SimConfig,
    default_genesis,
    make_registration_workload,
    run_simulation,
    sim_node_identities,
)
from .node import Node, NodeError, make_genesis

DEMO_SEEDS = {
    "doctor-1": ("demo-doctor-1", ROLE_DOCTOR, "Dr. Asma Hamid"),
    "doctor-2": ("demo-doctor-2", ROLE_DOCTOR, "Dr. Omar Khalil"),
    "patient-1": ("demo-patient-1", ROLE_PATIENT, "Lina Haddad"),
    "patient-2": ("demo-patient-2", ROLE_PATIENT, "Samir Aziz"),
    "patient-3": ("demo-patient-3", ROLE_PATIENT, "Nour Fares"),
}
DEMO_MEDICATIONS = [("Paracetamol 500mg", 120), ("Amoxicillin 250mg", 80),
                    ("Ibuprofen 200mg", 150)]
DEMO_LAB_DEFINITION = (
    "Test",
    [("Parameter1", "Unit1", "1", "10"),
     ("Parameter2", "Unit2", "2", "20"),
     ("Parameter3", "Unit3", "3", "30")],
)
DEMO_SYSTEM_START = "2024-01-01"
DEMO_APPOINTMENTS = [("patient-1", "doctor-1", "2026-09-01", 0, "General checkup"),
                     ("patient-2", "doctor-1", "2026-09-01", 1, "Follow-up")]


def _build_node(config: NodeConfig, auto_seal: bool = True) -> Node:
    admin = generate_identity(config.admin_seed)
    identity = generate_identity(config.node_seed)
    return Node(
        identity=identity,
        config=config.consensus,
        genesis=make_genesis(admin),
        data_dir=config.data_dir,
        block_capacity=config.block_capacity,
        auto_seal=auto_seal,
    )


def cmd_node_run(args) -> int:
    config = load_config(resolve_config_path(args.config))
    node = _build_node(config)
    keystore = Keystore(config.keystore_path)
    if config.admin_seed and generate_identity(config.admin_seed).address not in keystore.seeds:
        keystore.add(generate_identity(config.admin_seed).address, config.admin_seed)
    app = create_app(node, keystore=keystore)
    host, port = config.listen_host_port
    print(f"node {node.identity.address} at height {node.height}, "
          f"consensus {config.consensus.kind}, listening on {host}:{port}")
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def cmd_seed_demo(args) -> int:
    config = load_config(resolve_config_path(args.config))
    node = _build_node(config)
    if len(node.state.accounts) > 1:
        print("already seeded — nothing to do")
        return 0

    admin = generate_identity(config.admin_seed)
    keystore = Keystore(config.keystore_path)
    keystore.add(admin.address, config.admin_seed)

    def submit(identity, payload):
        tx = make_transaction(identity, node.next_nonce(identity.address),
                              node.clock(), payload)
        receipt = node.submit_transaction(tx)
        return receipt

    print(f"admin {admin.address} (genesis)")
    people = {}
    for label, (seed, role, name) in DEMO_SEEDS.items():
        who = generate_identity(seed)
        people[label] = who
        keystore.add(who.address, seed)
        receipt = submit(who, RegisterUser(
            address=who.address, role=role, public_key=who.public_key,
            enc_public_key=who.enc_public_key, name=name, demographics={},
        ))
        print(f"registered {label} {who.address} tx {receipt['tx_id']}")
        receipt = submit(admin, SetUserStatus(address=who.address, status=STATUS_ACTIVE))
        print(f"activated  {label} tx {receipt['tx_id']}")

    for name, stock in DEMO_MEDICATIONS:
        receipt = submit(admin, AddMedication(name=name, stock=stock))
        print(f"medication {name!r} tx {receipt['tx_id']}")

    test_name, params = DEMO_LAB_DEFINITION
    receipt = submit(admin, AddLabDefinition(
        test_name=test_name,
        parameters=[LabParameterSpec(name=n, unit=u, ref_min=lo, ref_max=hi)
                    for n, u, lo, hi in params],
    ))
    print(f"lab definition {test_name!r} tx {receipt['tx_id']}")

    receipt = submit(admin, SetSystemStart(start_date=DEMO_SYSTEM_START))
    print(f"system start {DEMO_SYSTEM_START} tx {receipt['tx_id']}")

    for patient_label, doctor_label, date, slot, purpose in DEMO_APPOINTMENTS:
        receipt = submit(people[patient_label], RequestAppointment(
            doctor=people[doctor_label].address, date=date, slot=slot,
            purpose=purpose, priority="normal",
        ))
        print(f"appointment {patient_label}->{doctor_label} {date} slot {slot} "
              f"tx {receipt['tx_id']}")

    print(f"seeded: height {node.height}, {len(node.state.audit_log)} audit entries, "
          f"keystore {config.keystore_path}")
    return 0


def _bench_consensus_config(kind: str, base: ConsensusConfig | None,
                            addresses: list[str]) -> ConsensusConfig:
    bits = base.pow_difficulty_bits if base else 8
    compression = base.time_compression if base else 100.0
    return ConsensusConfig(
        kind=kind,
        pow_difficulty_bits=bits,
        stakes={a: 1 for a in addresses} if kind == KIND_POS else {},
        delegates=tuple(addresses) if kind == KIND_DPOS else (),
        time_compression=compression,
    )


def run_bench(tx_count: int, node_count: int, seed: int,
              base: ConsensusConfig | None = None) -> list[dict]:
    """One workload, three consensus kinds, one row of measurements each."""
    if tx_count < 100:
        raise ValueError("bench needs --txs >= 100")
    identities = sim_node_identities(node_count)
    addresses = [i.address for i in identities]
    genesis = default_genesis()
    workload = make_registration_workload(tx_count, node_count)
    rows = []
    for kind in (KIND_POW, KIND_POS, KIND_DPOS):
        trace = run_simulation(
            SimConfig(node_count=node_count, rng_seed=seed),
            workload,
            _bench_consensus_config(kind, base, addresses),
            genesis=genesis,
            identities=identities,
        )
        rows.append({
            "kind": kind,
            "txs": trace.submitted,
            "committed": trace.committed,
            "tps": round(trace.tps, 3),
            "mean_latency_ms": round(trace.mean_latency_ms, 3),
            "forks": sum(1 for e in trace.events if e[2] == "chain_adopted"),
            "converged": trace.converged,
        })
    return rows


def bench_ordering_ok(rows: list[dict]) -> bool:
    by_kind = {row["kind"]: row for row in rows}
    tps = {k: by_kind[k]["tps"] for k in by_kind}
    lat = {k: by_kind[k]["mean_latency_ms"] for k in by_kind}
    return (tps[KIND_DPOS] > tps[KIND_POS] > tps[KIND_POW]
            and lat[KIND_POW] > lat[KIND_POS] > lat[KIND_DPOS])


def cmd_bench(args) -> int:
    base = None
    try:
        path = resolve_config_path(args.config)
    except ConfigError:
        path = None  # bench runs fine without a config file
    if path:
        base = load_config(path).consensus
    rows = run_bench(args.txs, args.nodes, args.seed, base)
    if args.csv:
        print("kind,txs,committed,tps,mean_latency_ms,forks,converged")
        for row in rows:
            print(f"{row['kind']},{row['txs']},{row['committed']},{row['tps']},"
                  f"{row['mean_latency_ms']},{row['forks']},{int(row['converged'])}")
    else:
        header = f"{'kind':6} {'txs':>5} {'committed':>9} {'tps':>10} {'latency_ms':>11} {'forks':>5}"
        print(header)
        print("-" * len(header))
        for row in rows:
            print(f"{row['kind']:6} {row['txs']:>5} {row['committed']:>9} "
                  f"{row['tps']:>10.3f} {row['mean_latency_ms']:>11.3f} {row['forks']:>5}")
    ok = bench_ordering_ok(rows)
    print(f"ordering check (tps dpos>pos>pow, latency pow>pos>dpos): "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_export(args) -> int:
    config = load_config(resolve_config_path(args.config))
    if args.dataset not in DATASET_KINDS:
        raise ExportError(f"unknown dataset {args.dataset!r}; "
                          f"choose from {', '.join(DATASET_KINDS)}")
    if args.format not in EXPORT_FORMATS:
        raise ExportError(f"unknown format {args.format!r}; "
                          f"choose from {', '.join(EXPORT_FORMATS)}")
    node = _build_node(config, auto_seal=False)
    data = export(build_dataset(node.state, args.dataset), args.format)
    with open(args.out, "wb") as fh:
        fh.write(data)
    print(f"wrote {len(data)} bytes to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medledger",
                                     description="permissioned EHR ledger tools")
    sub = parser.add_subparsers(dest="command", required=True)

    node_parser = sub.add_parser("node", help="node operations")
    node_sub = node_parser.add_subparsers(dest="node_command", required=True)
    run_parser = node_sub.add_parser("run", help="run a node with its gateway")
    run_parser.add_argument("--config")
    run_parser.set_defaults(func=cmd_node_run)

    seed_parser = sub.add_parser("seed-demo", help="seed demo users and data")
    seed_parser.add_argument("--config")
    seed_parser.set_defaults(func=cmd_seed_demo)

    bench_parser = sub.add_parser("bench", help="compare the three consensus kinds")
    bench_parser.add_argument("--config")
    bench_parser.add_argument("--txs", type=int, default=500)
    bench_parser.add_argument("--nodes", type=int, default=5)
    bench_parser.add_argument("--seed", type=int, default=42)
    bench_parser.add_argument("--csv", action="store_true")
    bench_parser.set_defaults(func=cmd_bench)

    export_parser = sub.add_parser("export", help="export a dataset to a file")
    export_parser.add_argument("--config")
    export_parser.add_argument("--dataset", required=True)
    export_parser.add_argument("--format", required=True)
    export_parser.add_argument("--out", required=True)
    export_parser.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ExportError, NodeError,
            consensus_mod.ConsensusConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
