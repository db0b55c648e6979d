"""HTTP gateway: key-based login, sessions, and role-scoped routes.

Authentication is challenge-response: the server hands out a single-use
32-byte nonce, the client signs ``b"medledger/login:" + nonce`` with its
account key, and a bearer token comes back. Sessions idle out after 30
minutes and the account's role and status are re-read from state on every
request, so suspending a user cuts them off token or not.

The gateway never holds user keys of record. Mutations are either signed
client-side (the request carries nonce/timestamp/signature produced over
bytes from ``POST /tx/prepare``) or, in demo deployments, by a keystore
file of seeds sitting next to the node config.
"""

from __future__ import annotations

import json
import os
import secrets
import time
from dataclasses import dataclass
from datetime import date as _today_date

from fastapi import Depends, FastAPI, Header, HTTPException, Query, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .codec import encode
from .crypto import (
    EncryptedRecord,
    Recipient,
    WrappedKey,
    encrypt_record,
    generate_identity,
    verify,
)
from .ehr_records import (
    AddLabDefinition,
    AddMedication,
    AdjustStock,
    GrantAccess,
    LabParameterSpec,
    OP_VIEW_AUDIT_LOG,
    OP_VIEW_DOCTOR_AGENDA,
    OP_VIEW_E_REPORTS,
    OP_VIEW_PATIENT_HISTORY,
    OP_VIEW_SLOT_AVAILABILITY,
    Prescribe,
    RecordIoT,
    RegisterUser,
    RequestAppointment,
    RevokeAccess,
    SetSystemStart,
    SetUserStatus,
    SubmitLabResult,
    UpdateAppointment,
    UpdateProfile,
    slot_label,
)
from .ehr_state import (
    ACCESS_DENY_CODES,
    DENY_LOGIN_REQUIRED,
    Rejection,
    STATUS_ACTIVE,
    query_views,
)
from .exporter import (
    EXPORT_FORMATS,
    DATASET_KINDS,
    MIME_TYPES,
    build_dataset,
    export,
    export_filename,
)
from .ledger import InvalidTransaction, Transaction, compute_tx_id, make_transaction, tx_signing_bytes
from .node import Node

LOGIN_DOMAIN = b"medledger/login:"
CHALLENGE_TTL_MS = 120_000
SESSION_TTL_MS = 30 * 60 * 1000


class Keystore:
    """Demo custody: address -> identity seed, persisted as plain JSON."""

    def __init__(self, path: str | None = None):
        self.path = path
        self.seeds: dict[str, str] = {}
        if path and os.path.exists(path):
            with open(path) as fh:
                self.seeds = json.load(fh)

    def save(self) -> None:
        if self.path:
            with open(self.path, "w") as fh:
                json.dump(self.seeds, fh, indent=2, sort_keys=True)

    def add(self, address: str, seed: str) -> None:
        self.seeds[address] = seed
        self.save()

    def identity_for(self, address: str):
        seed = self.seeds.get(address)
        return generate_identity(seed) if seed is not None else None


@dataclass
class GatewaySession:
    token: str
    address: str
    role: str
    expires_at_ms: int


@dataclass
class GatewayChallenge:
    nonce: bytes
    expires_at_ms: int


# ---------------------------------------------------------------------------
# Request bodies
# ---------------------------------------------------------------------------


class _Body(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AuthEnvelope(_Body):
    nonce: int
    timestamp_ms: int
    signature: str  # hex over the bytes from POST /tx/prepare


class ChallengeBody(_Body):
    address: str


class LoginBody(_Body):
    address: str
    signature: str


class RegisterBody(_Body):
    address: str
    role: str
    public_key: str
    enc_public_key: str
    name: str
    demographics: dict[str, str] = Field(default_factory=dict)
    seed: str | None = None  # demo custody: gateway keeps the seed and signs
    auth: AuthEnvelope | None = None


class StatusBody(_Body):
    status: str
    auth: AuthEnvelope | None = None


class ProfileBody(_Body):
    name: str | None = None
    demographics: dict[str, str] = Field(default_factory=dict)
    auth: AuthEnvelope | None = None


class AppointmentBody(_Body):
    doctor: str
    date: str
    slot: int
    purpose: str = ""
    priority: str = ""
    auth: AuthEnvelope | None = None


class AppointmentPatch(_Body):
    status: str | None = None
    observation_notes: str | None = None
    improvement_notes: str | None = None
    medicine: list[int] | None = None
    next_appointment_date: str | None = None
    next_appointment_slot: int | None = None
    priority: str | None = None
    auth: AuthEnvelope | None = None


class PrescriptionBody(_Body):
    appointment_id: int
    medication_id: int
    dosage: str
    auth: AuthEnvelope | None = None


class MedicationBody(_Body):
    name: str
    stock: int = 0
    auth: AuthEnvelope | None = None


class StockBody(_Body):
    delta: int
    auth: AuthEnvelope | None = None


class LabParamBody(_Body):
    name: str
    unit: str
    ref_min: str
    ref_max: str


class LabDefBody(_Body):
    test_name: str
    parameters: list[LabParamBody]
    auth: AuthEnvelope | None = None


class WrappedKeyBody(_Body):
    grantee_enc_public_key: str
    ephemeral_public_key: str
    nonce: str
    wrapped: str


class SealedBody(_Body):
    ciphertext: str
    nonce: str
    wrapped_keys: dict[str, WrappedKeyBody]


class LabResultBody(_Body):
    patient: str
    test_id: int
    values: dict[str, str]
    sealed: SealedBody | None = None  # absent → demo mode seals to the patient
    auth: AuthEnvelope | None = None


class IoTBody(_Body):
    patient: str
    device_id: str
    metric: str
    value: str
    unit: str
    observed_at_ms: int
    signer: str | None = None  # device address when device-signed
    auth: AuthEnvelope | None = None


class GrantBody(_Body):
    grantee: str
    scope: str = "all"
    grantee_public_key: str | None = None
    grantee_enc_public_key: str | None = None
    auth: AuthEnvelope | None = None


class SystemStartBody(_Body):
    start_date: str
    auth: AuthEnvelope | None = None


class PrepareBody(_Body):
    kind: str
    fields: dict


class EmptyBody(_Body):
    auth: AuthEnvelope | None = None


# ---------------------------------------------------------------------------
# JSON views of state objects
# ---------------------------------------------------------------------------


def _hex(value: str, name: str, length: int | None = None) -> bytes:
    try:
        raw = bytes.fromhex(value)
    except ValueError:
        raise _err(400, "malformed", f"{name} is not valid hex") from None
    if length is not None and len(raw) != length:
        raise _err(400, "malformed", f"{name} must be {length} bytes")
    return raw


def _err(status: int, code: str, detail: str | None = None) -> HTTPException:
    body = {"error": code}
    if detail:
        body["detail"] = detail
    return HTTPException(status_code=status, detail=body)


def appointment_json(a) -> dict:
    return {
        "id": a.id,
        "patient": a.patient,
        "doctor": a.doctor,
        "date": a.date,
        "slot": a.slot,
        "slot_label": slot_label(a.slot),
        "purpose": a.purpose,
        "status": a.status,
        "observation_notes": a.observation_notes,
        "improvement_notes": a.improvement_notes,
        "medicine": list(a.medicine),
        "next_appointment_date": a.next_appointment_date,
        "next_appointment_slot": a.next_appointment_slot,
        "record_number": a.record_number,
        "priority": a.priority,
    }


def account_json(account) -> dict:
    return {
        "address": account.address,
        "role": account.role,
        "status": account.status,
        "name": account.name,
        "demographics": dict(account.demographics),
        "registered_at_ms": account.registered_at_ms,
    }


def sealed_json(record: EncryptedRecord) -> dict:
    return {
        "ciphertext": record.ciphertext.hex(),
        "nonce": record.nonce.hex(),
        "wrapped_keys": {
            addr: {
                "grantee_enc_public_key": wk.grantee_enc_public_key.hex(),
                "ephemeral_public_key": wk.ephemeral_public_key.hex(),
                "nonce": wk.nonce.hex(),
                "wrapped": wk.wrapped.hex(),
            }
            for addr, wk in sorted(record.wrapped_keys.items())
        },
    }


def lab_result_json(r) -> dict:
    return {
        "id": r.id,
        "patient": r.patient,
        "doctor": r.doctor,
        "test_id": r.test_id,
        "values": dict(r.values),
        "flags": dict(r.flags),
        "reported_at_ms": r.reported_at_ms,
        "sealed": sealed_json(r.payload_ref),
    }


def prescription_json(p) -> dict:
    return {
        "id": p.id,
        "appointment_id": p.appointment_id,
        "patient": p.patient,
        "doctor": p.doctor,
        "medication_id": p.medication_id,
        "dosage": p.dosage,
    }


def iot_json(o) -> dict:
    return {
        "id": o.id,
        "device_id": o.device_id,
        "patient": o.patient,
        "metric": o.metric,
        "value": o.value,
        "unit": o.unit,
        "observed_at_ms": o.observed_at_ms,
        "flag": o.flag,
    }


def grant_json(g) -> dict:
    return {
        "id": g.id,
        "patient": g.patient,
        "grantee": g.grantee,
        "scope": g.scope,
        "granted_at_ms": g.granted_at_ms,
        "revoked_at_ms": g.revoked_at_ms,
    }


def audit_json(e) -> dict:
    return {
        "tx_id": e.tx_id.hex(),
        "timestamp_ms": e.timestamp_ms,
        "actor": e.actor,
        "action": e.action,
        "subject": e.subject,
    }


def medication_json(m) -> dict:
    return {"id": m.id, "name": m.name, "stock": m.stock}


def lab_definition_json(d) -> dict:
    return {
        "id": d.id,
        "test_name": d.test_name,
        "parameters": [
            {"id": p.id, "name": p.name, "unit": p.unit,
             "ref_min": p.ref_min, "ref_max": p.ref_max}
            for p in d.parameters
        ],
    }


def _sealed_from_body(body: SealedBody) -> EncryptedRecord:
    return EncryptedRecord(
        ciphertext=_hex(body.ciphertext, "sealed.ciphertext"),
        nonce=_hex(body.nonce, "sealed.nonce", 12),
        wrapped_keys={
            addr: WrappedKey(
                grantee_enc_public_key=_hex(wk.grantee_enc_public_key,
                                            "wrapped_keys.enc_public_key", 32),
                ephemeral_public_key=_hex(wk.ephemeral_public_key,
                                          "wrapped_keys.ephemeral_public_key", 32),
                nonce=_hex(wk.nonce, "wrapped_keys.nonce", 12),
                wrapped=_hex(wk.wrapped, "wrapped_keys.wrapped"),
            )
            for addr, wk in body.wrapped_keys.items()
        },
    )


# ---------------------------------------------------------------------------
# The app factory
# ---------------------------------------------------------------------------


def create_app(
    node: Node,
    keystore: Keystore | None = None,
    clock=None,
    session_ttl_ms: int = SESSION_TTL_MS,
    challenge_ttl_ms: int = CHALLENGE_TTL_MS,
) -> FastAPI:
    app = FastAPI(title="medledger gateway", docs_url=None, redoc_url=None)
    keystore = keystore or Keystore()
    clock = clock or (lambda: int(time.time() * 1000))
    challenges: dict[str, GatewayChallenge] = {}
    sessions: dict[str, GatewaySession] = {}

    @app.exception_handler(RequestValidationError)
    async def _on_validation_error(request: Request, exc: RequestValidationError):
        problems = "; ".join(
            f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}"
            for err in exc.errors()[:5])
        return JSONResponse(status_code=400,
                            content={"error": "malformed", "detail": problems[:300]})

    @app.exception_handler(HTTPException)
    async def _on_http_error(request: Request, exc: HTTPException):
        # keep error bodies flat: {"error": code, "detail": message}
        body = exc.detail if isinstance(exc.detail, dict) else {"error": str(exc.detail)}
        return JSONResponse(status_code=exc.status_code, content=body)

    def http_from_rejection(exc: Rejection) -> HTTPException:
        if exc.code == DENY_LOGIN_REQUIRED:
            return _err(401, exc.code, exc.message)
        if exc.code in ACCESS_DENY_CODES:
            return _err(403, exc.code, exc.message)
        if exc.code.startswith("unknown_"):
            return _err(404, exc.code, exc.message)
        return _err(409, exc.code, exc.message)

    def current_session(authorization: str | None = Header(None)) -> GatewaySession:
        if not authorization or not authorization.startswith("Bearer "):
            raise _err(401, "login_required", "missing bearer token")
        token = authorization.removeprefix("Bearer ")
        session = sessions.get(token)
        now = clock()
        if session is None or now >= session.expires_at_ms:
            sessions.pop(token, None)
            raise _err(401, "session_expired", "token unknown or expired")
        session.expires_at_ms = now + session_ttl_ms
        return session

    def active_account(session: GatewaySession):
        """Re-check role and status from live state on every request."""
        account = node.state.accounts.get(session.address)
        if account is None:
            raise _err(401, "unregistered", "account vanished from state")
        if account.status != STATUS_ACTIVE:
            raise _err(403, "account_inactive", f"account is {account.status}")
        return account

    def submit(signer: str, payload, auth: AuthEnvelope | None) -> dict:
        """Sign (or accept a signature), submit, and normalize errors."""
        if auth is not None:
            signature = _hex(auth.signature, "auth.signature", 64)
            tx = Transaction(
                tx_id=compute_tx_id(signer, auth.nonce, auth.timestamp_ms,
                                    payload, signature),
                signer=signer,
                nonce=auth.nonce,
                timestamp_ms=auth.timestamp_ms,
                payload=payload,
                signature=signature,
            )
        else:
            identity = keystore.identity_for(signer)
            if identity is None:
                raise _err(400, "signature_required",
                           "no demo custody for this address; sign via /tx/prepare")
            tx = make_transaction(identity, node.next_nonce(signer), clock(), payload)
        try:
            return node.submit_transaction(tx)
        except Rejection as exc:
            raise http_from_rejection(exc) from None
        except InvalidTransaction as exc:
            raise _err(400, "invalid_transaction", str(exc)) from None

    def run_view(session: GatewaySession, view: str, **params):
        try:
            return query_views(node.state, (session.address, session.role),
                               view, **params)
        except Rejection as exc:
            raise http_from_rejection(exc) from None

    # -- auth ---------------------------------------------------------------

    @app.post("/auth/challenge")
    def auth_challenge(body: ChallengeBody):
        if body.address not in node.state.accounts:
            raise _err(404, "not_registered", "no account for that address")
        nonce = secrets.token_bytes(32)
        challenges[body.address] = GatewayChallenge(
            nonce=nonce, expires_at_ms=clock() + challenge_ttl_ms
        )
        return {"address": body.address, "nonce": nonce.hex(),
                "expires_at_ms": challenges[body.address].expires_at_ms}

    @app.post("/auth/login")
    def auth_login(body: LoginBody):
        challenge = challenges.pop(body.address, None)  # single-use either way
        if challenge is None or clock() >= challenge.expires_at_ms:
            raise _err(401, "challenge_expired", "request a new challenge")
        account = node.state.accounts.get(body.address)
        if account is None:
            raise _err(404, "not_registered", "no account for that address")
        signature = _hex(body.signature, "signature", 64)
        if not verify(account.public_key, LOGIN_DOMAIN + challenge.nonce, signature):
            raise _err(401, "auth_failed", "signature does not verify")
        if account.status != STATUS_ACTIVE:
            raise _err(403, "account_inactive", f"account is {account.status}")
        token = secrets.token_urlsafe(24)
        sessions[token] = GatewaySession(
            token=token,
            address=account.address,
            role=account.role,
            expires_at_ms=clock() + session_ttl_ms,
        )
        return {"token": token, "address": account.address, "role": account.role}

    @app.post("/auth/logout")
    def auth_logout(authorization: str | None = Header(None)):
        if authorization and authorization.startswith("Bearer "):
            sessions.pop(authorization.removeprefix("Bearer "), None)
        return {"ok": True}

    # -- registration and users --------------------------------------------

    @app.post("/users", status_code=201)
    def register_user(body: RegisterBody):
        payload = RegisterUser(
            address=body.address,
            role=body.role,
            public_key=_hex(body.public_key, "public_key", 32),
            enc_public_key=_hex(body.enc_public_key, "enc_public_key", 32),
            name=body.name,
            demographics=dict(body.demographics),
        )
        auth = body.auth
        if auth is None:
            if body.seed is None:
                raise _err(400, "signature_required",
                           "registration needs either auth or a demo seed")
            identity = generate_identity(body.seed)
            if identity.address != body.address:
                raise _err(400, "malformed", "seed does not derive that address")
            keystore.add(identity.address, body.seed)
        receipt = submit(body.address, payload, auth)
        return {"tx_id": receipt["tx_id"], "height": receipt["height"],
                "address": body.address, "status": "pending"}

    @app.patch("/admin/users/{address}/status")
    def set_user_status(address: str, body: StatusBody,
                        session: GatewaySession = Depends(current_session)):
        active_account(session)
        receipt = submit(session.address, SetUserStatus(address=address, status=body.status),
                         body.auth)
        account = node.state.accounts[address]
        return {"tx_id": receipt["tx_id"], "user": account_json(account)}

    @app.get("/admin/users")
    def list_users(session: GatewaySession = Depends(current_session)):
        account = active_account(session)
        if account.role != "admin":
            raise _err(403, "forbidden", "admin only")
        return {"users": [account_json(a) for a in
                          sorted(node.state.accounts.values(), key=lambda a: a.address)]}

    @app.get("/users/{address}/keys")
    def user_keys(address: str, session: GatewaySession = Depends(current_session)):
        # Registered public keys are chain-public material; any active session
        # may read them (a doctor needs the patient's key to seal a record).
        active_account(session)
        account = node.state.accounts.get(address)
        if account is None:
            raise _err(404, "unknown_user", "no account for that address")
        return {"address": account.address,
                "public_key": account.public_key.hex(),
                "enc_public_key": account.enc_public_key.hex()}

    # -- profile ------------------------------------------------------------

    @app.get("/profile")
    def get_profile(session: GatewaySession = Depends(current_session)):
        account = node.state.accounts.get(session.address)
        if account is None:
            raise _err(401, "unregistered", "account vanished from state")
        return account_json(account)

    @app.patch("/profile")
    def patch_profile(body: ProfileBody,
                      session: GatewaySession = Depends(current_session)):
        active_account(session)
        payload = UpdateProfile(name=body.name, demographics=dict(body.demographics))
        receipt = submit(session.address, payload, body.auth)
        return {"tx_id": receipt["tx_id"],
                "profile": account_json(node.state.accounts[session.address])}

    # -- appointments -------------------------------------------------------

    @app.post("/appointments", status_code=201)
    def post_appointment(body: AppointmentBody,
                         session: GatewaySession = Depends(current_session)):
        active_account(session)
        payload = RequestAppointment(
            doctor=body.doctor, date=body.date, slot=body.slot,
            purpose=body.purpose, priority=body.priority,
        )
        receipt = submit(session.address, payload, body.auth)
        appointment = node.state.appointments[int(receipt["subject"])]
        return {"tx_id": receipt["tx_id"], "appointment": appointment_json(appointment)}

    @app.patch("/appointments/{appointment_id}")
    def patch_appointment(appointment_id: int, body: AppointmentPatch,
                          session: GatewaySession = Depends(current_session)):
        active_account(session)
        payload = UpdateAppointment(
            appointment_id=appointment_id,
            status=body.status,
            observation_notes=body.observation_notes,
            improvement_notes=body.improvement_notes,
            medicine=list(body.medicine) if body.medicine is not None else None,
            next_appointment_date=body.next_appointment_date,
            next_appointment_slot=body.next_appointment_slot,
            priority=body.priority,
        )
        receipt = submit(session.address, payload, body.auth)
        appointment = node.state.appointments[appointment_id]
        return {"tx_id": receipt["tx_id"], "appointment": appointment_json(appointment)}

    @app.get("/doctor/agenda")
    def doctor_agenda(date: str = Query(...),
                      session: GatewaySession = Depends(current_session)):
        agenda = run_view(session, OP_VIEW_DOCTOR_AGENDA,
                          doctor=session.address, date=date)
        return {"date": date, "appointments": [appointment_json(a) for a in agenda]}

    @app.get("/availability")
    def availability(doctor: str = Query(...), date: str = Query(...),
                     session: GatewaySession = Depends(current_session)):
        taken = run_view(session, OP_VIEW_SLOT_AVAILABILITY, doctor=doctor, date=date)
        return {
            "doctor": doctor,
            "date": date,
            "taken": taken,
            "slots": [{"slot": s, "label": slot_label(s), "free": s not in taken}
                      for s in range(24)],
        }

    @app.get("/patient/history")
    def patient_history(patient: str | None = Query(None),
                        session: GatewaySession = Depends(current_session)):
        subject = patient or session.address
        history = run_view(session, OP_VIEW_PATIENT_HISTORY, patient=subject)
        out = {
            "patient": subject,
            "appointments": [appointment_json(a) for a in history["appointments"]],
            "prescriptions": [prescription_json(p) for p in history["prescriptions"]],
            "lab_results": [lab_result_json(r) for r in history["lab_results"]],
            "iot_observations": [iot_json(o) for o in history["iot_observations"]],
        }
        if "grants" in history:
            out["grants"] = [grant_json(g) for g in history["grants"]]
        return out

    @app.get("/doctor/ereports")
    def doctor_ereports(session: GatewaySession = Depends(current_session)):
        events = run_view(session, OP_VIEW_E_REPORTS, doctor=session.address)
        return {"events": events}

    # -- prescriptions and medications --------------------------------------

    @app.post("/prescriptions", status_code=201)
    def post_prescription(body: PrescriptionBody,
                          session: GatewaySession = Depends(current_session)):
        active_account(session)
        payload = Prescribe(appointment_id=body.appointment_id,
                            medication_id=body.medication_id, dosage=body.dosage)
        receipt = submit(session.address, payload, body.auth)
        prescription = node.state.prescriptions[int(receipt["subject"])]
        return {"tx_id": receipt["tx_id"], "prescription": prescription_json(prescription)}

    @app.post("/admin/medications", status_code=201)
    def post_medication(body: MedicationBody,
                        session: GatewaySession = Depends(current_session)):
        active_account(session)
        receipt = submit(session.address,
                         AddMedication(name=body.name, stock=body.stock), body.auth)
        medication = node.state.medications[int(receipt["subject"])]
        return {"tx_id": receipt["tx_id"], "medication": medication_json(medication)}

    @app.get("/medications")
    def list_medications(session: GatewaySession = Depends(current_session)):
        active_account(session)
        return {"medications": [medication_json(m) for m in
                                sorted(node.state.medications.values(), key=lambda m: m.id)]}

    @app.patch("/admin/medications/{medication_id}/stock")
    def patch_stock(medication_id: int, body: StockBody,
                    session: GatewaySession = Depends(current_session)):
        active_account(session)
        receipt = submit(session.address,
                         AdjustStock(medication_id=medication_id, delta=body.delta),
                         body.auth)
        medication = node.state.medications[medication_id]
        return {"tx_id": receipt["tx_id"], "medication": medication_json(medication)}

    # -- laboratory ---------------------------------------------------------

    @app.post("/admin/labdefs", status_code=201)
    def post_labdef(body: LabDefBody,
                    session: GatewaySession = Depends(current_session)):
        active_account(session)
        payload = AddLabDefinition(
            test_name=body.test_name,
            parameters=[
                LabParameterSpec(name=p.name, unit=p.unit,
                                 ref_min=p.ref_min, ref_max=p.ref_max)
                for p in body.parameters
            ],
        )
        receipt = submit(session.address, payload, body.auth)
        definition = node.state.lab_definitions[int(receipt["subject"])]
        return {"tx_id": receipt["tx_id"], "definition": lab_definition_json(definition)}

    @app.get("/labdefs")
    def list_labdefs(session: GatewaySession = Depends(current_session)):
        active_account(session)
        return {"definitions": [lab_definition_json(d) for d in
                                sorted(node.state.lab_definitions.values(),
                                       key=lambda d: d.id)]}

    @app.post("/labresults", status_code=201)
    def post_labresult(body: LabResultBody,
                       session: GatewaySession = Depends(current_session)):
        active_account(session)
        if body.sealed is not None:
            sealed = _sealed_from_body(body.sealed)
        else:
            patient = node.state.accounts.get(body.patient)
            if patient is None:
                raise _err(404, "unknown_patient", "no such patient")
            plaintext = encode({"patient": body.patient, "test_id": body.test_id,
                                "values": dict(sorted(body.values.items()))})
            sealed = encrypt_record(plaintext,
                                    Recipient(patient.address, patient.enc_public_key))
        payload = SubmitLabResult(patient=body.patient, test_id=body.test_id,
                                  values=dict(body.values), sealed=sealed)
        receipt = submit(session.address, payload, body.auth)
        result = node.state.lab_results[int(receipt["subject"])]
        return {"tx_id": receipt["tx_id"], "result": lab_result_json(result)}

    # -- IoT ----------------------------------------------------------------

    @app.post("/iot/observations", status_code=202)
    def post_iot(body: IoTBody,
                 authorization: str | None = Header(None)):
        payload = RecordIoT(
            patient=body.patient, device_id=body.device_id, metric=body.metric,
            value=body.value, unit=body.unit, observed_at_ms=body.observed_at_ms,
        )
        if body.auth is not None:
            signer = body.signer or body.patient
            receipt = submit(signer, payload, body.auth)
        else:
            # Fall back to the session holder (a patient logging their own
            # device reading through demo custody).
            session = current_session(authorization)
            receipt = submit(session.address, payload, None)
        observation = node.state.iot_observations[int(receipt["subject"])]
        return {"tx_id": receipt["tx_id"], "observation": iot_json(observation),
                "flag": observation.flag}

    # -- access grants ------------------------------------------------------

    @app.post("/access/grants", status_code=201)
    def post_grant(body: GrantBody,
                   session: GatewaySession = Depends(current_session)):
        active_account(session)
        payload = GrantAccess(
            grantee=body.grantee,
            scope=body.scope,
            grantee_public_key=(_hex(body.grantee_public_key, "grantee_public_key", 32)
                                if body.grantee_public_key else None),
            grantee_enc_public_key=(_hex(body.grantee_enc_public_key,
                                         "grantee_enc_public_key", 32)
                                    if body.grantee_enc_public_key else None),
        )
        receipt = submit(session.address, payload, body.auth)
        grant = node.state.grants[int(receipt["subject"])]
        return {"tx_id": receipt["tx_id"], "grant": grant_json(grant)}

    @app.delete("/access/grants/{grant_id}")
    def delete_grant(grant_id: int, body: EmptyBody | None = None,
                     session: GatewaySession = Depends(current_session)):
        active_account(session)
        auth = body.auth if body is not None else None
        receipt = submit(session.address, RevokeAccess(grant_id=grant_id), auth)
        return {"tx_id": receipt["tx_id"], "grant": grant_json(node.state.grants[grant_id])}

    # -- admin: system, export, audit ---------------------------------------

    @app.post("/admin/system-start")
    def post_system_start(body: SystemStartBody,
                          session: GatewaySession = Depends(current_session)):
        active_account(session)
        receipt = submit(session.address, SetSystemStart(start_date=body.start_date),
                         body.auth)
        return {"tx_id": receipt["tx_id"], "start_date": body.start_date}

    @app.get("/admin/export")
    def admin_export(dataset: str = Query(...), format: str = Query(...),
                     session: GatewaySession = Depends(current_session)):
        account = active_account(session)
        if account.role != "admin":
            raise _err(403, "forbidden", "admin only")
        if dataset not in DATASET_KINDS:
            raise _err(400, "malformed", f"unknown dataset {dataset!r}")
        if format not in EXPORT_FORMATS:
            raise _err(400, "malformed", f"unknown format {format!r}")
        data = export(build_dataset(node.state, dataset), format)
        filename = export_filename(dataset, format, _today_date.today())
        return Response(
            content=data,
            media_type=MIME_TYPES[format],
            headers={"Content-Disposition": f'attachment; filename="{filename}"'},
        )

    @app.get("/admin/audit")
    def admin_audit(session: GatewaySession = Depends(current_session)):
        entries = run_view(session, OP_VIEW_AUDIT_LOG)
        return {"entries": [audit_json(e) for e in entries]}

    # -- client-side signing support ----------------------------------------

    def _payload_for_prepare(kind: str, fields: dict, signer: str):
        if kind == "register_user":
            body = RegisterBody.model_validate(fields)
            return RegisterUser(
                address=body.address, role=body.role,
                public_key=_hex(body.public_key, "public_key", 32),
                enc_public_key=_hex(body.enc_public_key, "enc_public_key", 32),
                name=body.name, demographics=dict(body.demographics),
            )
        if kind == "update_profile":
            body = ProfileBody.model_validate(fields)
            return UpdateProfile(name=body.name, demographics=dict(body.demographics))
        if kind == "request_appointment":
            body = AppointmentBody.model_validate(fields)
            return RequestAppointment(doctor=body.doctor, date=body.date,
                                      slot=body.slot, purpose=body.purpose,
                                      priority=body.priority)
        if kind == "update_appointment":
            body = AppointmentPatch.model_validate({k: v for k, v in fields.items()
                                                    if k != "appointment_id"})
            return UpdateAppointment(
                appointment_id=int(fields.get("appointment_id", -1)),
                status=body.status,
                observation_notes=body.observation_notes,
                improvement_notes=body.improvement_notes,
                medicine=list(body.medicine) if body.medicine is not None else None,
                next_appointment_date=body.next_appointment_date,
                next_appointment_slot=body.next_appointment_slot,
                priority=body.priority,
            )
        if kind == "set_user_status":
            return SetUserStatus(address=str(fields.get("address", "")),
                                 status=str(fields.get("status", "")))
        if kind == "prescribe":
            body = PrescriptionBody.model_validate(fields)
            return Prescribe(appointment_id=body.appointment_id,
                             medication_id=body.medication_id, dosage=body.dosage)
        if kind == "add_medication":
            body = MedicationBody.model_validate(fields)
            return AddMedication(name=body.name, stock=body.stock)
        if kind == "adjust_stock":
            return AdjustStock(medication_id=int(fields.get("medication_id", -1)),
                               delta=int(fields.get("delta", 0)))
        if kind == "add_lab_definition":
            body = LabDefBody.model_validate(fields)
            return AddLabDefinition(
                test_name=body.test_name,
                parameters=[LabParameterSpec(name=p.name, unit=p.unit,
                                             ref_min=p.ref_min, ref_max=p.ref_max)
                            for p in body.parameters],
            )
        if kind == "submit_lab_result":
            body = LabResultBody.model_validate(fields)
            if body.sealed is None:
                raise _err(400, "malformed",
                           "prepare for submit_lab_result requires the sealed record")
            return SubmitLabResult(patient=body.patient, test_id=body.test_id,
                                   values=dict(body.values),
                                   sealed=_sealed_from_body(body.sealed))
        if kind == "record_iot":
            body = IoTBody.model_validate(fields)
            return RecordIoT(patient=body.patient, device_id=body.device_id,
                             metric=body.metric, value=body.value, unit=body.unit,
                             observed_at_ms=body.observed_at_ms)
        if kind == "grant_access":
            body = GrantBody.model_validate(fields)
            return GrantAccess(
                grantee=body.grantee, scope=body.scope,
                grantee_public_key=(_hex(body.grantee_public_key,
                                         "grantee_public_key", 32)
                                    if body.grantee_public_key else None),
                grantee_enc_public_key=(_hex(body.grantee_enc_public_key,
                                             "grantee_enc_public_key", 32)
                                        if body.grantee_enc_public_key else None),
            )
        if kind == "revoke_access":
            return RevokeAccess(grant_id=int(fields.get("grant_id", -1)))
        if kind == "set_system_start":
            body = SystemStartBody.model_validate(fields)
            return SetSystemStart(start_date=body.start_date)
        raise _err(400, "malformed", f"cannot prepare payload kind {kind!r}")

    @app.post("/tx/prepare")
    def tx_prepare(body: PrepareBody, request: Request,
                   authorization: str | None = Header(None)):
        # Registration is the one kind prepared without a session: the signer
        # is the address being registered.
        if body.kind == "register_user":
            signer = str(body.fields.get("address", ""))
        else:
            signer = current_session(authorization).address
        try:
            payload = _payload_for_prepare(body.kind, dict(body.fields), signer)
        except (ValueError, TypeError) as exc:
            raise _err(400, "malformed", str(exc)[:200]) from None
        nonce = node.next_nonce(signer)
        timestamp_ms = clock()
        return {
            "signer": signer,
            "nonce": nonce,
            "timestamp_ms": timestamp_ms,
            "signing_bytes": tx_signing_bytes(signer, nonce, timestamp_ms, payload).hex(),
        }

    return app
