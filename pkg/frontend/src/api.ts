// Typed client for the gateway HTTP+JSON API. This is the only place the app
// talks to the network. Mutations follow the sign-locally contract: fetch the
// signing bytes from /tx/prepare, have the keystore sign them, then submit
// the payload plus the auth envelope. Private keys never enter this module —
// it only sees a signer callback returning signature hex.

import type { SealedRecordJson } from './keystore';

export type Role = 'patient' | 'doctor' | 'admin';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

export interface Account {
  address: string;
  role: Role;
  status: string;
  name: string;
  demographics: Record<string, string>;
  registered_at_ms: number;
}

export interface SlotInfo {
  slot: number;
  label: string;
  free: boolean;
}

export interface Availability {
  doctor: string;
  date: string;
  taken: number[];
  slots: SlotInfo[];
}

export interface Appointment {
  id: number;
  patient: string;
  doctor: string;
  date: string;
  slot: number;
  slot_label: string;
  purpose: string;
  status: string;
  observation_notes: string;
  improvement_notes: string;
  medicine: number[];
  next_appointment_date: string | null;
  next_appointment_slot: number | null;
  record_number: string;
  priority: string;
}

export interface Prescription {
  id: number;
  appointment_id: number;
  patient: string;
  doctor: string;
  medication_id: number;
  dosage: string;
}

export interface Medication {
  id: number;
  name: string;
  stock: number;
}

export interface LabParameter {
  id: number;
  name: string;
  unit: string;
  ref_min: string;
  ref_max: string;
}

export interface LabDefinition {
  id: number;
  test_name: string;
  parameters: LabParameter[];
}

export interface LabResult {
  id: number;
  patient: string;
  doctor: string;
  test_id: number;
  values: Record<string, string>;
  flags: Record<string, string>;
  reported_at_ms: number;
  sealed: SealedRecordJson;
}

export interface IoTObservation {
  id: number;
  device_id: string;
  patient: string;
  metric: string;
  value: string;
  unit: string;
  observed_at_ms: number;
  flag: string;
}

export interface Grant {
  id: number;
  patient: string;
  grantee: string;
  scope: string;
  granted_at_ms: number;
  revoked_at_ms: number | null;
}

export interface AuditEntry {
  tx_id: string;
  timestamp_ms: number;
  actor: string;
  action: string;
  subject: string;
}

export interface History {
  patient: string;
  appointments: Appointment[];
  prescriptions: Prescription[];
  lab_results: LabResult[];
  iot_observations: IoTObservation[];
  grants?: Grant[];
}

export interface EReportEvent {
  kind: string;
  id: number;
  patient: string;
  [extra: string]: unknown;
}

export interface UserKeys {
  address: string;
  public_key: string;
  enc_public_key: string;
}

export interface Prepared {
  signer: string;
  nonce: number;
  timestamp_ms: number;
  signing_bytes: string;
}

export interface Download {
  filename: string;
  mime: string;
  bytes: Uint8Array;
}

export interface AppointmentPatch {
  status?: string;
  observation_notes?: string;
  improvement_notes?: string;
  medicine?: number[];
  next_appointment_date?: string;
  next_appointment_slot?: number;
  priority?: string;
}

export interface RegisterFields {
  address: string;
  role: Role;
  public_key: string;
  enc_public_key: string;
  name: string;
  demographics: Record<string, string>;
}

export type PayloadSigner = (signingBytesHex: string) => string;

export const DATASETS = ['medication', 'doctors', 'laboratory', 'patients'] as const;
export const EXPORT_FORMATS = ['csv', 'xml', 'txt'] as const;

export class Client {
  token: string | null = null;
  signer: PayloadSigner | null = null;

  constructor(readonly base: string = '') {}

  private headers(json: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers['content-type'] = 'application/json';
    if (this.token) headers['authorization'] = `Bearer ${this.token}`;
    return headers;
  }

  private async fail(response: Response): Promise<never> {
    let code = `http_${response.status}`;
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (body && typeof body.error === 'string') code = body.error;
      if (body && typeof body.detail === 'string') detail = body.detail;
    } catch {
      // non-JSON error body; keep the status line
    }
    throw new ApiError(response.status, code, detail);
  }

  async request(method: string, path: string, body?: unknown): Promise<any> {
    const response = await fetch(this.base + path, {
      method,
      headers: this.headers(body !== undefined),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) await this.fail(response);
    return response.json();
  }

  private async requestBytes(path: string): Promise<Download> {
    const response = await fetch(this.base + path, { headers: this.headers(false) });
    if (!response.ok) await this.fail(response);
    const disposition = response.headers.get('content-disposition') || '';
    const match = /filename="([^"]+)"/.exec(disposition);
    return {
      filename: match ? match[1] : 'export',
      mime: response.headers.get('content-type') || 'application/octet-stream',
      bytes: new Uint8Array(await response.arrayBuffer()),
    };
  }

  // prepare -> sign locally -> submit with the auth envelope
  private async signed(
    kind: string,
    fields: Record<string, unknown>,
    method: string,
    path: string,
    body: Record<string, unknown>,
  ): Promise<any> {
    if (!this.signer) throw new ApiError(0, 'no_signer', 'sign in first');
    const prepared: Prepared = await this.request('POST', '/tx/prepare', { kind, fields });
    const auth = {
      nonce: prepared.nonce,
      timestamp_ms: prepared.timestamp_ms,
      signature: this.signer(prepared.signing_bytes),
    };
    return this.request(method, path, { ...body, auth });
  }

  // -- auth --

  challenge(address: string): Promise<{ address: string; nonce: string; expires_at_ms: number }> {
    return this.request('POST', '/auth/challenge', { address });
  }

  login(address: string, signature: string): Promise<{ token: string; address: string; role: Role }> {
    return this.request('POST', '/auth/login', { address, signature });
  }

  logout(): Promise<{ ok: boolean }> {
    return this.request('POST', '/auth/logout');
  }

  // Registration is self-signed by the address being created, so it takes an
  // explicit signer instead of relying on a session.
  async registerUser(fields: RegisterFields, signer: PayloadSigner) {
    const prepared: Prepared = await this.request('POST', '/tx/prepare', {
      kind: 'register_user',
      fields,
    });
    const auth = {
      nonce: prepared.nonce,
      timestamp_ms: prepared.timestamp_ms,
      signature: signer(prepared.signing_bytes),
    };
    return this.request('POST', '/users', { ...fields, auth });
  }

  // -- reads --

  profile(): Promise<Account> {
    return this.request('GET', '/profile');
  }

  availability(doctor: string, date: string): Promise<Availability> {
    return this.request(
      'GET',
      `/availability?doctor=${encodeURIComponent(doctor)}&date=${encodeURIComponent(date)}`,
    );
  }

  patientHistory(patient?: string): Promise<History> {
    const query = patient ? `?patient=${encodeURIComponent(patient)}` : '';
    return this.request('GET', `/patient/history${query}`);
  }

  doctorAgenda(date: string): Promise<{ date: string; appointments: Appointment[] }> {
    return this.request('GET', `/doctor/agenda?date=${encodeURIComponent(date)}`);
  }

  ereports(): Promise<{ events: EReportEvent[] }> {
    return this.request('GET', '/doctor/ereports');
  }

  medications(): Promise<{ medications: Medication[] }> {
    return this.request('GET', '/medications');
  }

  labdefs(): Promise<{ definitions: LabDefinition[] }> {
    return this.request('GET', '/labdefs');
  }

  userKeys(address: string): Promise<UserKeys> {
    return this.request('GET', `/users/${address}/keys`);
  }

  adminUsers(): Promise<{ users: Account[] }> {
    return this.request('GET', '/admin/users');
  }

  audit(): Promise<{ entries: AuditEntry[] }> {
    return this.request('GET', '/admin/audit');
  }

  exportDataset(dataset: string, format: string): Promise<Download> {
    return this.requestBytes(`/admin/export?dataset=${dataset}&format=${format}`);
  }

  // -- mutations (all client-signed) --

  bookAppointment(fields: {
    doctor: string;
    date: string;
    slot: number;
    purpose: string;
    priority: string;
  }): Promise<{ tx_id: string; appointment: Appointment }> {
    return this.signed('request_appointment', fields, 'POST', '/appointments', fields);
  }

  updateAppointment(
    id: number,
    patch: AppointmentPatch,
  ): Promise<{ tx_id: string; appointment: Appointment }> {
    return this.signed(
      'update_appointment',
      { ...patch, appointment_id: id },
      'PATCH',
      `/appointments/${id}`,
      patch as Record<string, unknown>,
    );
  }

  prescribe(fields: {
    appointment_id: number;
    medication_id: number;
    dosage: string;
  }): Promise<{ tx_id: string; prescription: Prescription }> {
    return this.signed('prescribe', fields, 'POST', '/prescriptions', fields);
  }

  submitLabResult(fields: {
    patient: string;
    test_id: number;
    values: Record<string, string>;
    sealed: SealedRecordJson;
  }): Promise<{ tx_id: string; result: LabResult }> {
    return this.signed('submit_lab_result', fields, 'POST', '/labresults', fields);
  }

  grantAccess(fields: {
    grantee: string;
    scope: string;
  }): Promise<{ tx_id: string; grant: Grant }> {
    return this.signed('grant_access', fields, 'POST', '/access/grants', fields);
  }

  revokeAccess(grantId: number): Promise<{ tx_id: string; grant: Grant }> {
    return this.signed(
      'revoke_access',
      { grant_id: grantId },
      'DELETE',
      `/access/grants/${grantId}`,
      {},
    );
  }

  setUserStatus(address: string, status: string): Promise<{ tx_id: string; user: Account }> {
    return this.signed(
      'set_user_status',
      { address, status },
      'PATCH',
      `/admin/users/${address}/status`,
      { status },
    );
  }

  addMedication(fields: {
    name: string;
    stock: number;
  }): Promise<{ tx_id: string; medication: Medication }> {
    return this.signed('add_medication', fields, 'POST', '/admin/medications', fields);
  }

  adjustStock(medicationId: number, delta: number): Promise<{ tx_id: string; medication: Medication }> {
    return this.signed(
      'adjust_stock',
      { medication_id: medicationId, delta },
      'PATCH',
      `/admin/medications/${medicationId}/stock`,
      { delta },
    );
  }

  addLabDefinition(fields: {
    test_name: string;
    parameters: { name: string; unit: string; ref_min: string; ref_max: string }[];
  }): Promise<{ tx_id: string; definition: LabDefinition }> {
    return this.signed('add_lab_definition', fields, 'POST', '/admin/labdefs', fields);
  }

  setSystemStart(startDate: string): Promise<{ tx_id: string; start_date: string }> {
    return this.signed(
      'set_system_start',
      { start_date: startDate },
      'POST',
      '/admin/system-start',
      { start_date: startDate },
    );
  }
}
