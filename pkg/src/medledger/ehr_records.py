"""Clinical domain objects and the transaction payload variants that mutate them.

Everything here is a registered canonical record: state objects so the state
hash is well defined, payloads so they can be signed and carried in blocks.
Decimal quantities (lab values, reference bounds) travel as strings and are
compared through ``decimal.Decimal`` to keep replicas bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation

from .codec import register_record
from .crypto import EncryptedRecord

# Roles (exactly these three)
ROLE_PATIENT = "patient"
ROLE_DOCTOR = "doctor"
ROLE_ADMIN = "admin"
ROLES = (ROLE_PATIENT, ROLE_DOCTOR, ROLE_ADMIN)

# Account statuses
STATUS_PENDING = "pending"
STATUS_ACTIVE = "active"
STATUS_SUSPENDED = "suspended"
ACCOUNT_STATUSES = (STATUS_PENDING, STATUS_ACTIVE, STATUS_SUSPENDED)

# Appointment statuses and their allowed transitions
APPT_REQUESTED = "requested"
APPT_CONFIRMED = "confirmed"
APPT_COMPLETED = "completed"
APPT_CANCELLED = "cancelled"
APPOINTMENT_TRANSITIONS = {
    APPT_REQUESTED: (APPT_CONFIRMED, APPT_CANCELLED),
    APPT_CONFIRMED: (APPT_COMPLETED, APPT_CANCELLED),
    APPT_COMPLETED: (APPT_CANCELLED,),
    APPT_CANCELLED: (),
}

# The appointment day: 24 twenty-minute slots from 08:00 to 16:00
SLOT_COUNT = 24
_DAY_START_MINUTES = 8 * 60
_SLOT_MINUTES = 20


def slot_label(slot: int) -> str:
    """Human label for a slot index, e.g. slot 0 -> '08:00 - 08:20'."""
    if not 0 <= slot < SLOT_COUNT:
        raise ValueError(f"slot out of range: {slot}")
    start = _DAY_START_MINUTES + slot * _SLOT_MINUTES
    end = start + _SLOT_MINUTES
    return f"{start // 60:02d}:{start % 60:02d} - {end // 60:02d}:{end % 60:02d}"


# Reference-range flags
FLAG_LOW = "low"
FLAG_NORMAL = "normal"
FLAG_HIGH = "high"
FLAG_UNCLASSIFIED = "unclassified"


def parse_decimal(text: str) -> Decimal:
    try:
        value = Decimal(text)
    except (InvalidOperation, TypeError):
        raise ValueError(f"not a decimal: {text!r}") from None
    if not value.is_finite():
        raise ValueError(f"not a finite decimal: {text!r}")
    return value


def flag_for_value(value: Decimal, ref_min: Decimal, ref_max: Decimal) -> str:
    """Classify against an inclusive [ref_min, ref_max] interval."""
    if value < ref_min:
        return FLAG_LOW
    if value > ref_max:
        return FLAG_HIGH
    return FLAG_NORMAL


# ---------------------------------------------------------------------------
# State objects
# ---------------------------------------------------------------------------


@register_record
@dataclass
class UserAccount:
    address: str
    role: str
    public_key: bytes
    enc_public_key: bytes
    status: str
    name: str
    demographics: dict[str, str]
    registered_at_ms: int


@register_record
@dataclass
class Appointment:
    id: int
    patient: str
    doctor: str
    date: str  # ISO calendar day
    slot: int
    purpose: str
    status: str
    observation_notes: str
    improvement_notes: str
    medicine: list[int]
    next_appointment_date: str | None
    next_appointment_slot: int | None
    record_number: int
    priority: str


@register_record
@dataclass
class LabParameter:
    id: int
    name: str
    unit: str
    ref_min: str
    ref_max: str


@register_record
@dataclass
class LabTestDefinition:
    id: int
    test_name: str
    parameters: list[LabParameter]


@register_record
@dataclass
class LabResult:
    id: int
    patient: str
    doctor: str
    test_id: int
    values: dict[str, str]
    flags: dict[str, str]
    payload_ref: EncryptedRecord
    reported_at_ms: int


@register_record
@dataclass
class MedicationItem:
    id: int
    name: str
    stock: int


@register_record
@dataclass
class Prescription:
    id: int
    appointment_id: int
    patient: str
    doctor: str
    medication_id: int
    dosage: str


@register_record
@dataclass
class IoTObservation:
    id: int
    device_id: str
    patient: str
    metric: str
    value: str
    unit: str
    observed_at_ms: int
    flag: str


@register_record
@dataclass
class AuditEntry:
    tx_id: bytes
    timestamp_ms: int
    actor: str
    action: str
    subject: str


GRANT_SCOPE_ALL = "all"


@register_record
@dataclass
class AccessGrant:
    id: int
    patient: str
    grantee: str
    scope: str  # "all" or "<kind>:<id>", e.g. "lab_result:3"
    granted_at_ms: int
    revoked_at_ms: int | None


# ---------------------------------------------------------------------------
# Transaction payloads
# ---------------------------------------------------------------------------


@register_record
@dataclass(frozen=True)
class RegisterUser:
    address: str
    role: str
    public_key: bytes
    enc_public_key: bytes
    name: str
    demographics: dict[str, str] = field(default_factory=dict)


@register_record
@dataclass(frozen=True)
class SetUserStatus:
    address: str
    status: str


@register_record
@dataclass(frozen=True)
class UpdateProfile:
    name: str | None = None
    demographics: dict[str, str] = field(default_factory=dict)


@register_record
@dataclass(frozen=True)
class RequestAppointment:
    doctor: str
    date: str
    slot: int
    purpose: str
    priority: str = ""


@register_record
@dataclass(frozen=True)
class UpdateAppointment:
    """Partial update; None fields are left untouched."""

    appointment_id: int
    status: str | None = None
    observation_notes: str | None = None
    improvement_notes: str | None = None
    medicine: list[int] | None = None
    next_appointment_date: str | None = None
    next_appointment_slot: int | None = None
    priority: str | None = None


@register_record
@dataclass(frozen=True)
class Prescribe:
    appointment_id: int
    medication_id: int
    dosage: str


@register_record
@dataclass(frozen=True)
class AddMedication:
    name: str
    stock: int


@register_record
@dataclass(frozen=True)
class AdjustStock:
    medication_id: int
    delta: int


@register_record
@dataclass(frozen=True)
class LabParameterSpec:
    name: str
    unit: str
    ref_min: str
    ref_max: str


@register_record
@dataclass(frozen=True)
class AddLabDefinition:
    test_name: str
    parameters: list[LabParameterSpec]


@register_record
@dataclass(frozen=True)
class SubmitLabResult:
    patient: str
    test_id: int
    values: dict[str, str]
    sealed: EncryptedRecord


@register_record
@dataclass(frozen=True)
class RecordIoT:
    patient: str
    device_id: str
    metric: str
    value: str
    unit: str
    observed_at_ms: int


@register_record
@dataclass(frozen=True)
class GrantAccess:
    grantee: str
    scope: str = GRANT_SCOPE_ALL
    # Device grantees are not registered users; the grant may carry their keys
    # so their signatures on IoT submissions can be checked.
    grantee_public_key: bytes | None = None
    grantee_enc_public_key: bytes | None = None


@register_record
@dataclass(frozen=True)
class RevokeAccess:
    grant_id: int


@register_record
@dataclass(frozen=True)
class SetSystemStart:
    start_date: str


PAYLOAD_TYPES = (
    RegisterUser,
    SetUserStatus,
    UpdateProfile,
    RequestAppointment,
    UpdateAppointment,
    Prescribe,
    AddMedication,
    AdjustStock,
    AddLabDefinition,
    SubmitLabResult,
    RecordIoT,
    GrantAccess,
    RevokeAccess,
    SetSystemStart,
)

# snake_case kind tag per payload class, e.g. RegisterUser -> "register_user"
def _kind_of(cls: type) -> str:
    name = cls.__name__
    out = [name[0].lower()]
    for ch in name[1:]:
        if ch.isupper():
            out.append("_")
            out.append(ch.lower())
        else:
            out.append(ch)
    return "".join(out)


PAYLOAD_KINDS = {cls: _kind_of(cls) for cls in PAYLOAD_TYPES}
# the mechanical split would produce "record_io_t"
PAYLOAD_KINDS[RecordIoT] = "record_iot"

# Operation kinds for access control: every mutating payload kind plus reads.
OP_VIEW_PATIENT_HISTORY = "view_patient_history"
OP_VIEW_DOCTOR_AGENDA = "view_doctor_agenda"
OP_VIEW_E_REPORTS = "view_e_reports"
OP_VIEW_AUDIT_LOG = "view_audit_log"
OP_VIEW_SLOT_AVAILABILITY = "view_slot_availability"
OP_EXPORT_DATA = "export_data"

VIEW_OPERATIONS = (
    OP_VIEW_PATIENT_HISTORY,
    OP_VIEW_DOCTOR_AGENDA,
    OP_VIEW_E_REPORTS,
    OP_VIEW_AUDIT_LOG,
    OP_VIEW_SLOT_AVAILABILITY,
)

ALL_OPERATIONS = tuple(PAYLOAD_KINDS.values()) + VIEW_OPERATIONS + (OP_EXPORT_DATA,)
