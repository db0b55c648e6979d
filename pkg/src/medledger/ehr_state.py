"""The replicated clinical state machine: RBAC, registries, workflows, audit.

State is a pure fold of the chain's transaction payloads: applying the same
sequence from genesis always reproduces the same registries, the same audit
log, and the same state hash. A rejected transaction mutates nothing — every
handler validates completely before its first write.

Access control follows the sign-in algorithm: no session means denial, an
unknown address means denial, and otherwise the (current) role looked up from
state decides through a fixed role/operation matrix. Self-registration is the
one structural exception, authenticated by the key embedded in its payload
rather than by an existing account.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from datetime import date as _date
from decimal import Decimal

from .codec import encode
from .crypto import address_from_public_key, digest
from .ehr_records import (
    ACCOUNT_STATUSES,
    ALL_OPERATIONS,
    APPOINTMENT_TRANSITIONS,
    APPT_CANCELLED,
    APPT_COMPLETED,
    APPT_REQUESTED,
    AccessGrant,
    AddLabDefinition,
    AddMedication,
    AdjustStock,
    Appointment,
    AuditEntry,
    FLAG_UNCLASSIFIED,
    GRANT_SCOPE_ALL,
    GrantAccess,
    IoTObservation,
    LabParameter,
    LabResult,
    LabTestDefinition,
    MedicationItem,
    PAYLOAD_KINDS,
    Prescribe,
    Prescription,
    RecordIoT,
    RegisterUser,
    RequestAppointment,
    RevokeAccess,
    ROLE_ADMIN,
    ROLE_DOCTOR,
    ROLE_PATIENT,
    ROLES,
    SLOT_COUNT,
    STATUS_ACTIVE,
    STATUS_PENDING,
    SetSystemStart,
    SetUserStatus,
    SubmitLabResult,
    UpdateAppointment,
    UpdateProfile,
    UserAccount,
    flag_for_value,
    parse_decimal,
    OP_EXPORT_DATA,
    OP_VIEW_AUDIT_LOG,
    OP_VIEW_DOCTOR_AGENDA,
    OP_VIEW_E_REPORTS,
    OP_VIEW_PATIENT_HISTORY,
    OP_VIEW_SLOT_AVAILABILITY,
)

# Deny reason codes
DENY_LOGIN_REQUIRED = "login_required"
DENY_UNREGISTERED = "unregistered"
DENY_INACTIVE = "account_inactive"
DENY_FORBIDDEN = "forbidden"
ACCESS_DENY_CODES = (
    DENY_LOGIN_REQUIRED,
    DENY_UNREGISTERED,
    DENY_INACTIVE,
    DENY_FORBIDDEN,
)

# What each role may do, derived from the three role charters: patients act on
# their own records, doctors add and read clinical data, admins run the system.
PERMISSION_MATRIX: dict[str, frozenset[str]] = {
    ROLE_PATIENT: frozenset(
        {
            "update_profile",
            "request_appointment",
            "update_appointment",  # payload level restricts patients to cancelling
            "record_iot",
            "grant_access",
            "revoke_access",
            OP_VIEW_PATIENT_HISTORY,
            OP_VIEW_SLOT_AVAILABILITY,
        }
    ),
    ROLE_DOCTOR: frozenset(
        {
            "update_appointment",
            "prescribe",
            "submit_lab_result",
            OP_VIEW_PATIENT_HISTORY,  # object level requires grant or being party
            OP_VIEW_DOCTOR_AGENDA,
            OP_VIEW_E_REPORTS,
            OP_VIEW_SLOT_AVAILABILITY,
        }
    ),
    ROLE_ADMIN: frozenset(
        {
            "set_user_status",
            "add_medication",
            "adjust_stock",
            "add_lab_definition",
            "set_system_start",
            OP_VIEW_AUDIT_LOG,
            OP_EXPORT_DATA,
        }
    ),
}


class Rejection(Exception):
    """A transaction or query refused by the state machine.

    ``code`` is a stable machine-readable rule name; access denials reuse the
    DENY_* codes so callers can distinguish authorization from state rules.
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message

    @property
    def is_access_denial(self) -> bool:
        return self.code in ACCESS_DENY_CODES


@dataclass(frozen=True)
class AccessDecision:
    allowed: bool
    reason: str | None = None

    @staticmethod
    def allow() -> "AccessDecision":
        return AccessDecision(True)

    @staticmethod
    def deny(reason: str) -> "AccessDecision":
        return AccessDecision(False, reason)


Session = tuple[str, str]  # (address, role snapshot); state role is authoritative


class EhrState:
    """All registries replicated by the chain, plus the audit log."""

    def __init__(self):
        self.accounts: dict[str, UserAccount] = {}
        self.device_keys: dict[str, tuple[bytes, bytes]] = {}
        self.appointments: dict[int, Appointment] = {}
        self.lab_definitions: dict[int, LabTestDefinition] = {}
        self.lab_results: dict[int, LabResult] = {}
        self.medications: dict[int, MedicationItem] = {}
        self.prescriptions: dict[int, Prescription] = {}
        self.iot_observations: dict[int, IoTObservation] = {}
        self.grants: dict[int, AccessGrant] = {}
        self.audit_log: list[AuditEntry] = []
        self.nonces: dict[str, int] = {}
        self.system_start_date: str | None = None
        self._next_ids: dict[str, int] = {}

    # -- key and account lookups -------------------------------------------

    def public_key_of(self, address: str) -> bytes | None:
        account = self.accounts.get(address)
        if account is not None:
            return account.public_key
        device = self.device_keys.get(address)
        return device[0] if device else None

    def enc_public_key_of(self, address: str) -> bytes | None:
        account = self.accounts.get(address)
        if account is not None:
            return account.enc_public_key
        device = self.device_keys.get(address)
        return device[1] if device else None

    def last_nonce(self, address: str) -> int:
        return self.nonces.get(address, 0)

    def _take_id(self, counter: str) -> int:
        value = self._next_ids.get(counter, 1)
        self._next_ids[counter] = value + 1
        return value

    # -- snapshotting -------------------------------------------------------

    def clone(self) -> "EhrState":
        return copy.deepcopy(self)

    def state_hash(self) -> bytes:
        """Digest of the canonical encoding of everything replicated."""
        snapshot = {
            "accounts": {k: v for k, v in sorted(self.accounts.items())},
            "device_keys": {
                k: [v[0], v[1]] for k, v in sorted(self.device_keys.items())
            },
            "appointments": {str(k): v for k, v in sorted(self.appointments.items())},
            "lab_definitions": {
                str(k): v for k, v in sorted(self.lab_definitions.items())
            },
            "lab_results": {str(k): v for k, v in sorted(self.lab_results.items())},
            "medications": {str(k): v for k, v in sorted(self.medications.items())},
            "prescriptions": {str(k): v for k, v in sorted(self.prescriptions.items())},
            "iot_observations": {
                str(k): v for k, v in sorted(self.iot_observations.items())
            },
            "grants": {str(k): v for k, v in sorted(self.grants.items())},
            "audit_log": self.audit_log,
            "nonces": {k: v for k, v in sorted(self.nonces.items())},
            "system_start_date": self.system_start_date,
            "next_ids": {k: v for k, v in sorted(self._next_ids.items())},
        }
        return digest(encode(snapshot))

    # -- grants -------------------------------------------------------------

    def active_grant(self, patient: str, grantee: str, scope: str | None = None):
        """The live grant from patient to grantee covering scope, if any."""
        for grant in self.grants.values():
            if grant.patient != patient or grant.grantee != grantee:
                continue
            if grant.revoked_at_ms is not None:
                continue
            if grant.scope == GRANT_SCOPE_ALL or scope is None or grant.scope == scope:
                return grant
        return None


def check_access(
    state: EhrState, session: Session | None, operation_kind: str
) -> AccessDecision:
    """Gate an operation: sign-in check, role lookup, then the matrix."""
    if operation_kind not in ALL_OPERATIONS:
        return AccessDecision.deny(DENY_FORBIDDEN)
    if session is None:
        return AccessDecision.deny(DENY_LOGIN_REQUIRED)
    address = session[0]
    account = state.accounts.get(address)
    if account is None:
        return AccessDecision.deny(DENY_UNREGISTERED)
    if account.status != STATUS_ACTIVE:
        return AccessDecision.deny(DENY_INACTIVE)
    if operation_kind in PERMISSION_MATRIX[account.role]:
        return AccessDecision.allow()
    return AccessDecision.deny(DENY_FORBIDDEN)


def _require_access(state: EhrState, signer: str, operation_kind: str) -> UserAccount:
    decision = check_access(state, (signer, ""), operation_kind)
    if not decision.allowed:
        raise Rejection(decision.reason, f"{operation_kind} denied: {decision.reason}")
    return state.accounts[signer]


def _parse_date(text: str, what: str) -> _date:
    try:
        return _date.fromisoformat(text)
    except (ValueError, TypeError):
        raise Rejection("invalid_date", f"{what} is not an ISO date: {text!r}") from None


# ---------------------------------------------------------------------------
# Transaction application
# ---------------------------------------------------------------------------


def apply_transaction(state: EhrState, tx, height: int | None = None) -> AuditEntry:
    """Apply one validated transaction; returns the audit entry it emitted.

    Raises Rejection without touching state if any rule fails. The caller is
    responsible for signature and nonce validation (the ledger does both).
    ``height`` is the containing block height; registrations inside the
    genesis block come up active, which is how the first admin exists.
    """
    payload = tx.payload
    kind = PAYLOAD_KINDS.get(type(payload))
    if kind is None:
        raise Rejection("unknown_payload", f"unknown payload type {type(payload).__name__}")

    handler = _HANDLERS[type(payload)]
    subject = handler(state, tx, payload, height)

    state.nonces[tx.signer] = tx.nonce
    entry = AuditEntry(
        tx_id=tx.tx_id,
        timestamp_ms=tx.timestamp_ms,
        actor=tx.signer,
        action=kind,
        subject=subject,
    )
    state.audit_log.append(entry)
    return entry


def _apply_register_user(state, tx, p: RegisterUser, height) -> str:
    if tx.signer != p.address:
        raise Rejection("signer_mismatch", "registration must be signed by the new address")
    if p.address in state.accounts:
        raise Rejection("already_registered", f"{p.address} is already registered")
    if p.role not in ROLES:
        raise Rejection("invalid_role", f"unknown role {p.role!r}")
    if address_from_public_key(p.public_key) != p.address:
        raise Rejection("key_address_mismatch", "public key does not hash to the address")
    if len(p.enc_public_key) != 32:
        raise Rejection("invalid_key", "encryption public key must be 32 bytes")
    if not p.name:
        raise Rejection("missing_name", "a display name is required")
    status = STATUS_ACTIVE if height == 0 else STATUS_PENDING
    state.accounts[p.address] = UserAccount(
        address=p.address,
        role=p.role,
        public_key=p.public_key,
        enc_public_key=p.enc_public_key,
        status=status,
        name=p.name,
        demographics=dict(p.demographics),
        registered_at_ms=tx.timestamp_ms,
    )
    return p.address


def _apply_set_user_status(state, tx, p: SetUserStatus, height) -> str:
    _require_access(state, tx.signer, "set_user_status")
    account = state.accounts.get(p.address)
    if account is None:
        raise Rejection("unknown_user", f"no account {p.address}")
    if p.status not in ACCOUNT_STATUSES:
        raise Rejection("invalid_status", f"unknown status {p.status!r}")
    account.status = p.status
    return p.address


def _apply_update_profile(state, tx, p: UpdateProfile, height) -> str:
    account_check = _require_access(state, tx.signer, "update_profile")
    if p.name is not None and not p.name:
        raise Rejection("missing_name", "name cannot be cleared")
    if p.name is not None:
        account_check.name = p.name
    account_check.demographics.update(p.demographics)
    return tx.signer


def _apply_request_appointment(state, tx, p: RequestAppointment, height) -> str:
    _require_access(state, tx.signer, "request_appointment")
    doctor = state.accounts.get(p.doctor)
    if doctor is None or doctor.role != ROLE_DOCTOR:
        raise Rejection("unknown_doctor", f"no doctor {p.doctor}")
    if doctor.status != STATUS_ACTIVE:
        raise Rejection("doctor_inactive", f"doctor {p.doctor} is not active")
    appointment = schedule_appointment(
        state,
        patient=tx.signer,
        doctor=p.doctor,
        date=p.date,
        slot=p.slot,
        purpose=p.purpose,
        priority=p.priority,
    )
    return str(appointment.id)


def schedule_appointment(
    state: EhrState,
    patient: str,
    doctor: str,
    date: str,
    slot: int,
    purpose: str,
    priority: str = "",
) -> Appointment:
    """Create a Requested appointment if the doctor's slot is free that day.

    The day has exactly 24 twenty-minute slots; a slot already held by a
    non-cancelled appointment is refused, and nothing may be booked before
    the admin-set system start date.
    """
    _parse_date(date, "appointment date")
    if not isinstance(slot, int) or not 0 <= slot < SLOT_COUNT:
        raise Rejection("invalid_slot", f"slot must be 0..{SLOT_COUNT - 1}, got {slot}")
    if state.system_start_date is not None and date < state.system_start_date:
        raise Rejection(
            "before_system_start",
            f"scheduling opens {state.system_start_date}; {date} is earlier",
        )
    for existing in state.appointments.values():
        if (
            existing.doctor == doctor
            and existing.date == date
            and existing.slot == slot
            and existing.status != APPT_CANCELLED
        ):
            raise Rejection("slot_taken", f"slot {slot} on {date} is already booked")
    appointment_id = state._take_id("appointment")
    appointment = Appointment(
        id=appointment_id,
        patient=patient,
        doctor=doctor,
        date=date,
        slot=slot,
        purpose=purpose,
        status=APPT_REQUESTED,
        observation_notes="",
        improvement_notes="",
        medicine=[],
        next_appointment_date=None,
        next_appointment_slot=None,
        record_number=appointment_id,
        priority=priority,
    )
    state.appointments[appointment_id] = appointment
    return appointment


def _apply_update_appointment(state, tx, p: UpdateAppointment, height) -> str:
    account = _require_access(state, tx.signer, "update_appointment")
    appointment = state.appointments.get(p.appointment_id)
    if appointment is None:
        raise Rejection("unknown_appointment", f"no appointment {p.appointment_id}")

    if account.role == ROLE_PATIENT:
        if appointment.patient != tx.signer:
            raise Rejection(DENY_FORBIDDEN, "not your appointment")
        only_cancel = p.status == APPT_CANCELLED and all(
            v is None
            for v in (
                p.observation_notes,
                p.improvement_notes,
                p.medicine,
                p.next_appointment_date,
                p.next_appointment_slot,
                p.priority,
            )
        )
        if not only_cancel:
            raise Rejection(DENY_FORBIDDEN, "patients may only cancel their appointment")
    else:
        if appointment.doctor != tx.signer:
            raise Rejection(DENY_FORBIDDEN, "not your appointment")

    if p.status is not None:
        if p.status not in APPOINTMENT_TRANSITIONS:
            raise Rejection("invalid_status", f"unknown status {p.status!r}")
        if p.status not in APPOINTMENT_TRANSITIONS[appointment.status]:
            raise Rejection(
                "illegal_transition",
                f"{appointment.status} -> {p.status} is not allowed",
            )
    if p.medicine is not None:
        for med_id in p.medicine:
            if med_id not in state.medications:
                raise Rejection("unknown_medication", f"no medication {med_id}")
    if p.next_appointment_date is not None:
        _parse_date(p.next_appointment_date, "next appointment date")
    if p.next_appointment_slot is not None and not 0 <= p.next_appointment_slot < SLOT_COUNT:
        raise Rejection(
            "invalid_slot", f"next slot must be 0..{SLOT_COUNT - 1}"
        )

    if p.status is not None:
        appointment.status = p.status
    if p.observation_notes is not None:
        appointment.observation_notes = p.observation_notes
    if p.improvement_notes is not None:
        appointment.improvement_notes = p.improvement_notes
    if p.medicine is not None:
        appointment.medicine = list(p.medicine)
    if p.next_appointment_date is not None:
        appointment.next_appointment_date = p.next_appointment_date
    if p.next_appointment_slot is not None:
        appointment.next_appointment_slot = p.next_appointment_slot
    if p.priority is not None:
        appointment.priority = p.priority
    return str(appointment.id)


def _apply_prescribe(state, tx, p: Prescribe, height) -> str:
    _require_access(state, tx.signer, "prescribe")
    appointment = state.appointments.get(p.appointment_id)
    if appointment is None:
        raise Rejection("unknown_appointment", f"no appointment {p.appointment_id}")
    if appointment.doctor != tx.signer:
        raise Rejection(DENY_FORBIDDEN, "not your appointment")
    if p.medication_id not in state.medications:
        raise Rejection("unknown_medication", f"no medication {p.medication_id}")
    if not p.dosage:
        raise Rejection("missing_dosage", "dosage text is required")
    prescription_id = state._take_id("prescription")
    state.prescriptions[prescription_id] = Prescription(
        id=prescription_id,
        appointment_id=p.appointment_id,
        patient=appointment.patient,
        doctor=tx.signer,
        medication_id=p.medication_id,
        dosage=p.dosage,
    )
    if p.medication_id not in appointment.medicine:
        appointment.medicine.append(p.medication_id)
    return str(prescription_id)


def _apply_add_medication(state, tx, p: AddMedication, height) -> str:
    _require_access(state, tx.signer, "add_medication")
    if not p.name:
        raise Rejection("missing_name", "medication name is required")
    if p.stock < 0:
        raise Rejection("negative_stock", "initial stock cannot be negative")
    medication_id = state._take_id("medication")
    state.medications[medication_id] = MedicationItem(
        id=medication_id, name=p.name, stock=p.stock
    )
    return str(medication_id)


def _apply_adjust_stock(state, tx, p: AdjustStock, height) -> str:
    _require_access(state, tx.signer, "adjust_stock")
    medication = state.medications.get(p.medication_id)
    if medication is None:
        raise Rejection("unknown_medication", f"no medication {p.medication_id}")
    if medication.stock + p.delta < 0:
        raise Rejection(
            "negative_stock",
            f"stock {medication.stock} cannot absorb delta {p.delta}",
        )
    medication.stock += p.delta
    return str(p.medication_id)


def _apply_add_lab_definition(state, tx, p: AddLabDefinition, height) -> str:
    _require_access(state, tx.signer, "add_lab_definition")
    if not p.test_name:
        raise Rejection("missing_name", "test name is required")
    if not p.parameters:
        raise Rejection("missing_parameters", "at least one parameter is required")
    seen_names = set()
    bounds: list[tuple[Decimal, Decimal]] = []
    for spec in p.parameters:
        if not spec.name:
            raise Rejection("missing_name", "parameter name is required")
        if spec.name in seen_names:
            raise Rejection("duplicate_parameter", f"parameter {spec.name!r} repeats")
        seen_names.add(spec.name)
        try:
            low, high = parse_decimal(spec.ref_min), parse_decimal(spec.ref_max)
        except ValueError as exc:
            raise Rejection("invalid_reference", str(exc)) from None
        if low > high:
            raise Rejection(
                "inverted_reference",
                f"parameter {spec.name!r} has ref_min > ref_max",
            )
        bounds.append((low, high))
    definition_id = state._take_id("lab_definition")
    parameters = [
        LabParameter(
            id=state._take_id("lab_parameter"),
            name=spec.name,
            unit=spec.unit,
            ref_min=spec.ref_min,
            ref_max=spec.ref_max,
        )
        for spec in p.parameters
    ]
    state.lab_definitions[definition_id] = LabTestDefinition(
        id=definition_id, test_name=p.test_name, parameters=parameters
    )
    return str(definition_id)


def _apply_submit_lab_result(state, tx, p: SubmitLabResult, height) -> str:
    _require_access(state, tx.signer, "submit_lab_result")
    result = submit_lab_result(
        state,
        doctor=tx.signer,
        patient=p.patient,
        test_id=p.test_id,
        values=p.values,
        sealed=p.sealed,
        reported_at_ms=tx.timestamp_ms,
    )
    return str(result.id)


def submit_lab_result(
    state: EhrState,
    doctor: str,
    patient: str,
    test_id: int,
    values: dict[str, str],
    sealed,
    reported_at_ms: int,
) -> LabResult:
    """Record a lab result; values must cover the definition exactly.

    Flags come straight from each parameter's inclusive reference interval.
    The sealed payload must already be wrapped to the patient — the state
    machine never sees a record key.
    """
    patient_account = state.accounts.get(patient)
    if patient_account is None or patient_account.role != ROLE_PATIENT:
        raise Rejection("unknown_patient", f"no patient {patient}")
    definition = state.lab_definitions.get(test_id)
    if definition is None:
        raise Rejection("unknown_test", f"no lab test definition {test_id}")
    defined = [param.name for param in definition.parameters]
    missing = [name for name in defined if name not in values]
    if missing:
        raise Rejection("missing_values", f"missing values for: {', '.join(missing)}")
    extra = [name for name in values if name not in defined]
    if extra:
        raise Rejection("unknown_parameters", f"undefined parameters: {', '.join(extra)}")
    flags: dict[str, str] = {}
    for param in definition.parameters:
        try:
            value = parse_decimal(values[param.name])
        except ValueError as exc:
            raise Rejection("invalid_value", str(exc)) from None
        flags[param.name] = flag_for_value(
            value, parse_decimal(param.ref_min), parse_decimal(param.ref_max)
        )
    if patient not in sealed.wrapped_keys:
        raise Rejection("sealed_not_for_patient", "encrypted payload must be wrapped to the patient")
    result_id = state._take_id("lab_result")
    result = LabResult(
        id=result_id,
        patient=patient,
        doctor=doctor,
        test_id=test_id,
        values=dict(values),
        flags=flags,
        payload_ref=sealed,
        reported_at_ms=reported_at_ms,
    )
    state.lab_results[result_id] = result
    return result


def _apply_record_iot(state, tx, p: RecordIoT, height) -> str:
    patient_account = state.accounts.get(p.patient)
    if patient_account is None or patient_account.role != ROLE_PATIENT:
        raise Rejection("unknown_patient", f"no patient {p.patient}")
    if tx.signer == p.patient:
        _require_access(state, tx.signer, "record_iot")
    elif tx.signer in state.device_keys:
        # Device lane: the signing device needs a live grant from the patient.
        if state.active_grant(p.patient, tx.signer) is None:
            raise Rejection(DENY_FORBIDDEN, "device holds no grant from the patient")
        if patient_account.status != STATUS_ACTIVE:
            raise Rejection("patient_inactive", f"patient {p.patient} is not active")
    else:
        raise Rejection(DENY_FORBIDDEN, "signer may not submit observations for the patient")
    try:
        value = parse_decimal(p.value)
    except ValueError as exc:
        raise Rejection("invalid_value", str(exc)) from None
    flag = FLAG_UNCLASSIFIED
    for definition_id in sorted(state.lab_definitions):
        for param in state.lab_definitions[definition_id].parameters:
            if param.name == p.metric:
                flag = flag_for_value(
                    value, parse_decimal(param.ref_min), parse_decimal(param.ref_max)
                )
                break
        else:
            continue
        break
    observation_id = state._take_id("iot_observation")
    state.iot_observations[observation_id] = IoTObservation(
        id=observation_id,
        device_id=p.device_id,
        patient=p.patient,
        metric=p.metric,
        value=p.value,
        unit=p.unit,
        observed_at_ms=p.observed_at_ms,
        flag=flag,
    )
    return str(observation_id)


def _apply_grant_access(state, tx, p: GrantAccess, height) -> str:
    _require_access(state, tx.signer, "grant_access")
    if p.grantee == tx.signer:
        raise Rejection("self_grant", "cannot grant access to yourself")
    if len(p.grantee) != 40:
        raise Rejection("invalid_address", f"grantee address malformed: {p.grantee!r}")
    if p.grantee_public_key is not None:
        if address_from_public_key(p.grantee_public_key) != p.grantee:
            raise Rejection("key_address_mismatch", "grantee key does not hash to the address")
        if p.grantee_enc_public_key is None or len(p.grantee_enc_public_key) != 32:
            raise Rejection("invalid_key", "grantee encryption key must be 32 bytes")
    elif p.grantee not in state.accounts and p.grantee not in state.device_keys:
        raise Rejection(
            "unknown_grantee",
            "grantee is neither a registered user nor a keyed device",
        )
    if state.active_grant(tx.signer, p.grantee, p.scope) is not None:
        raise Rejection("grant_exists", "an equivalent grant is already active")
    if p.grantee_public_key is not None and p.grantee not in state.accounts:
        state.device_keys[p.grantee] = (p.grantee_public_key, p.grantee_enc_public_key)
    grant_id = state._take_id("grant")
    state.grants[grant_id] = AccessGrant(
        id=grant_id,
        patient=tx.signer,
        grantee=p.grantee,
        scope=p.scope,
        granted_at_ms=tx.timestamp_ms,
        revoked_at_ms=None,
    )
    return str(grant_id)


def _apply_revoke_access(state, tx, p: RevokeAccess, height) -> str:
    _require_access(state, tx.signer, "revoke_access")
    grant = state.grants.get(p.grant_id)
    if grant is None:
        raise Rejection("unknown_grant", f"no grant {p.grant_id}")
    if grant.patient != tx.signer:
        raise Rejection(DENY_FORBIDDEN, "not your grant")
    if grant.revoked_at_ms is not None:
        raise Rejection("already_revoked", f"grant {p.grant_id} is already revoked")
    grant.revoked_at_ms = tx.timestamp_ms
    return str(p.grant_id)


def _apply_set_system_start(state, tx, p: SetSystemStart, height) -> str:
    _require_access(state, tx.signer, "set_system_start")
    _parse_date(p.start_date, "system start date")
    state.system_start_date = p.start_date
    return p.start_date


_HANDLERS = {
    RegisterUser: _apply_register_user,
    SetUserStatus: _apply_set_user_status,
    UpdateProfile: _apply_update_profile,
    RequestAppointment: _apply_request_appointment,
    UpdateAppointment: _apply_update_appointment,
    Prescribe: _apply_prescribe,
    AddMedication: _apply_add_medication,
    AdjustStock: _apply_adjust_stock,
    AddLabDefinition: _apply_add_lab_definition,
    SubmitLabResult: _apply_submit_lab_result,
    RecordIoT: _apply_record_iot,
    GrantAccess: _apply_grant_access,
    RevokeAccess: _apply_revoke_access,
    SetSystemStart: _apply_set_system_start,
}


# ---------------------------------------------------------------------------
# Views
# ---------------------------------------------------------------------------


def _doctor_visible_scope(state: EhrState, doctor: str, patient: str):
    """(full_access, granted_record_scopes) for a doctor reading a patient."""
    full = state.active_grant(patient, doctor, GRANT_SCOPE_ALL) is not None
    scopes = {
        g.scope
        for g in state.grants.values()
        if g.patient == patient
        and g.grantee == doctor
        and g.revoked_at_ms is None
        and g.scope != GRANT_SCOPE_ALL
    }
    return full, scopes


def patient_history(state: EhrState, session: Session, patient: str) -> dict:
    """Everything about one patient that the session is entitled to read."""
    decision = check_access(state, session, OP_VIEW_PATIENT_HISTORY)
    if not decision.allowed:
        raise Rejection(decision.reason, f"history denied: {decision.reason}")
    viewer = state.accounts[session[0]]
    if state.accounts.get(patient) is None:
        raise Rejection("unknown_patient", f"no patient {patient}")

    if viewer.role == ROLE_PATIENT:
        if viewer.address != patient:
            raise Rejection(DENY_FORBIDDEN, "patients may only read their own history")
        full, scopes = True, set()
    else:
        full, scopes = _doctor_visible_scope(state, viewer.address, patient)
        party = any(
            a.patient == patient and a.doctor == viewer.address
            for a in state.appointments.values()
        ) or any(
            r.patient == patient and r.doctor == viewer.address
            for r in state.lab_results.values()
        )
        if not full and not scopes and not party:
            raise Rejection(DENY_FORBIDDEN, "no grant from the patient and not party to care")

    def visible(kind: str, obj_id: int, party_doctor: str | None) -> bool:
        if full:
            return True
        if f"{kind}:{obj_id}" in scopes:
            return True
        return party_doctor == viewer.address

    history = {
        "appointments": [
            a
            for a in sorted(state.appointments.values(), key=lambda a: a.id)
            if a.patient == patient and visible("appointment", a.id, a.doctor)
        ],
        "prescriptions": [
            p
            for p in sorted(state.prescriptions.values(), key=lambda p: p.id)
            if p.patient == patient and visible("prescription", p.id, p.doctor)
        ],
        "lab_results": [
            r
            for r in sorted(state.lab_results.values(), key=lambda r: r.id)
            if r.patient == patient and visible("lab_result", r.id, r.doctor)
        ],
        "iot_observations": [
            o
            for o in sorted(state.iot_observations.values(), key=lambda o: o.id)
            if o.patient == patient and visible("iot_observation", o.id, None)
        ],
    }
    if viewer.role == ROLE_PATIENT:
        history["grants"] = [
            g for g in sorted(state.grants.values(), key=lambda g: g.id) if g.patient == patient
        ]
    return history


def doctor_agenda(state: EhrState, session: Session, doctor: str, date: str) -> list[Appointment]:
    decision = check_access(state, session, OP_VIEW_DOCTOR_AGENDA)
    if not decision.allowed:
        raise Rejection(decision.reason, f"agenda denied: {decision.reason}")
    if session[0] != doctor:
        raise Rejection(DENY_FORBIDDEN, "doctors may only read their own agenda")
    _parse_date(date, "agenda date")
    return sorted(
        (
            a
            for a in state.appointments.values()
            if a.doctor == doctor and a.date == date and a.status != APPT_CANCELLED
        ),
        key=lambda a: a.slot,
    )


def e_reports(state: EhrState, session: Session, doctor: str) -> list[dict]:
    """Chronological record of the doctor's completed activities."""
    decision = check_access(state, session, OP_VIEW_E_REPORTS)
    if not decision.allowed:
        raise Rejection(decision.reason, f"e-reports denied: {decision.reason}")
    if session[0] != doctor:
        raise Rejection(DENY_FORBIDDEN, "doctors may only read their own reports")
    events: list[tuple[tuple, dict]] = []
    for a in state.appointments.values():
        if a.doctor == doctor and a.status == APPT_COMPLETED:
            events.append(
                (
                    (a.date, a.slot, 0, a.id),
                    {"kind": "appointment", "id": a.id, "date": a.date, "slot": a.slot,
                     "patient": a.patient, "purpose": a.purpose},
                )
            )
    for r in state.lab_results.values():
        if r.doctor == doctor:
            events.append(
                (
                    ("", 0, r.reported_at_ms, r.id),
                    {"kind": "lab_result", "id": r.id, "patient": r.patient,
                     "test_id": r.test_id, "reported_at_ms": r.reported_at_ms},
                )
            )
    for p in state.prescriptions.values():
        if p.doctor == doctor:
            events.append(
                (
                    ("", 0, 0, p.id),
                    {"kind": "prescription", "id": p.id, "patient": p.patient,
                     "appointment_id": p.appointment_id, "medication_id": p.medication_id},
                )
            )
    return [entry for _, entry in sorted(events, key=lambda pair: pair[0])]


def audit_log_view(state: EhrState, session: Session) -> list[AuditEntry]:
    decision = check_access(state, session, OP_VIEW_AUDIT_LOG)
    if not decision.allowed:
        raise Rejection(decision.reason, f"audit log denied: {decision.reason}")
    return list(state.audit_log)


def slot_availability(state: EhrState, session: Session, doctor: str, date: str) -> list[int]:
    """Occupied slot indices for a doctor-day; no patient detail leaks."""
    decision = check_access(state, session, OP_VIEW_SLOT_AVAILABILITY)
    if not decision.allowed:
        raise Rejection(decision.reason, f"availability denied: {decision.reason}")
    _parse_date(date, "availability date")
    if doctor not in state.accounts or state.accounts[doctor].role != ROLE_DOCTOR:
        raise Rejection("unknown_doctor", f"no doctor {doctor}")
    return sorted(
        a.slot
        for a in state.appointments.values()
        if a.doctor == doctor and a.date == date and a.status != APPT_CANCELLED
    )


def query_views(state: EhrState, session: Session | None, view: str, **params):
    """Single dispatch point for the read side, mirroring the gateway routes."""
    if session is None:
        raise Rejection(DENY_LOGIN_REQUIRED, "sign in first")
    if view == OP_VIEW_PATIENT_HISTORY:
        return patient_history(state, session, params["patient"])
    if view == OP_VIEW_DOCTOR_AGENDA:
        return doctor_agenda(state, session, params["doctor"], params["date"])
    if view == OP_VIEW_E_REPORTS:
        return e_reports(state, session, params["doctor"])
    if view == OP_VIEW_AUDIT_LOG:
        return audit_log_view(state, session)
    if view == OP_VIEW_SLOT_AVAILABILITY:
        return slot_availability(state, session, params["doctor"], params["date"])
    raise Rejection("unknown_view", f"unknown view {view!r}")
