"""Shared fixtures: identities, a populated state harness, and a node factory."""

import pytest

from medledger.consensus import ConsensusConfig
from medledger.crypto import generate_identity
from medledger.ehr_records import (
    AddLabDefinition,
    AddMedication,
    LabParameterSpec,
    RegisterUser,
    ROLE_ADMIN,
    ROLE_DOCTOR,
    ROLE_PATIENT,
    SetSystemStart,
    SetUserStatus,
    STATUS_ACTIVE,
)
from medledger.ehr_state import EhrState, apply_transaction
from medledger.ledger import make_transaction
from medledger.node import Node, make_genesis


class Realm:
    """A state plus the identities that act on it, with auto-nonced submits.

    Keeps tests readable: ``realm.submit(realm.doctor, Prescribe(...))``
    instead of plumbing nonces and timestamps everywhere.
    """

    def __init__(self):
        self.state = EhrState()
        self.clock_ms = 1_700_000_000_000
        self.admin = generate_identity("realm-admin")
        self.doctor = generate_identity("realm-doctor")
        self.doctor2 = generate_identity("realm-doctor-2")
        self.patient = generate_identity("realm-patient")
        self.patient2 = generate_identity("realm-patient-2")
        self._nonces = {}

    def tick(self, ms=1):
        self.clock_ms += ms
        return self.clock_ms

    def make_tx(self, identity, payload):
        nonce = self._nonces.get(identity.address, 0) + 1
        self._nonces[identity.address] = nonce
        return make_transaction(identity, nonce, self.tick(), payload)

    def submit(self, identity, payload, height=None):
        return apply_transaction(self.state, self.make_tx(identity, payload), height)

    def register(self, identity, role, name, height=None, activate=True):
        self.submit(identity, RegisterUser(
            address=identity.address, role=role, public_key=identity.public_key,
            enc_public_key=identity.enc_public_key, name=name, demographics={},
        ), height=height)
        if activate and height != 0:
            self.submit(self.admin, SetUserStatus(
                address=identity.address, status=STATUS_ACTIVE))


@pytest.fixture
def realm():
    """Admin, two doctors and two patients, all active."""
    r = Realm()
    r.register(r.admin, ROLE_ADMIN, "Root Admin", height=0)
    r.register(r.doctor, ROLE_DOCTOR, "Dr. One")
    r.register(r.doctor2, ROLE_DOCTOR, "Dr. Two")
    r.register(r.patient, ROLE_PATIENT, "Pat One")
    r.register(r.patient2, ROLE_PATIENT, "Pat Two")
    return r


@pytest.fixture
def clinical_realm(realm):
    """realm plus a medication, the standard lab definition, and a start date."""
    realm.submit(realm.admin, AddMedication(name="Paracetamol 500mg", stock=50))
    realm.submit(realm.admin, AddLabDefinition(
        test_name="Test",
        parameters=[
            LabParameterSpec(name="Parameter1", unit="Unit1", ref_min="1", ref_max="10"),
            LabParameterSpec(name="Parameter2", unit="Unit2", ref_min="2", ref_max="20"),
            LabParameterSpec(name="Parameter3", unit="Unit3", ref_min="3", ref_max="30"),
        ],
    ))
    realm.submit(realm.admin, SetSystemStart(start_date="2024-01-01"))
    return realm


@pytest.fixture
def node_factory(tmp_path):
    """Build standalone auto-sealing nodes with cheap proof-of-work."""
    counter = {"n": 0}

    def build(consensus=None, admin_seed="test-admin", data_dir=None, auto_seal=True):
        counter["n"] += 1
        admin = generate_identity(admin_seed)
        return Node(
            identity=admin,
            config=consensus or ConsensusConfig(kind="pow", pow_difficulty_bits=4),
            genesis=make_genesis(admin),
            data_dir=data_dir or str(tmp_path / f"node-{counter['n']}"),
            auto_seal=auto_seal,
        )

    return build
