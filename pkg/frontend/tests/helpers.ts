import { expect, inject } from 'vitest';
import { ApiError, Client } from '../src/api';
import { App, createApp } from '../src/app';
import {
  bytesToHex,
  deriveIdentity,
  sealRecord,
  signLogin,
  signPrepared,
  utf8ToBytes,
} from '../src/keystore';

export const PHRASES = {
  admin: 'demo-admin',
  doctor: 'demo-doctor-1',
  doctor2: 'demo-doctor-2',
  patient: 'demo-patient-1',
  patient2: 'demo-patient-2',
};

// A well-formed address that no account has: mutation probes aimed at it
// pass or fail RBAC without ever changing state.
export const GHOST = '00'.repeat(20);

export function gatewayUrl(): string {
  return inject('gatewayUrl');
}

// ---------------------------------------------------------------------------
// Traffic recording: every request the app makes, verbatim, so tests can
// assert that no private key material ever goes over the wire.
// ---------------------------------------------------------------------------

export interface RecordedCall {
  method: string;
  url: string;
  body: string;
}

export const traffic: RecordedCall[] = [];
let recording = false;

function recordTraffic(): void {
  if (recording) return;
  recording = true;
  const original = globalThis.fetch.bind(globalThis);
  globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
    traffic.push({
      method: init?.method ?? 'GET',
      url: String(input),
      body: typeof init?.body === 'string' ? init.body : '',
    });
    return original(input, init);
  }) as typeof fetch;
}

export function assertNoKeyMaterialOnWire(phrases: string[]): void {
  expect(traffic.length).toBeGreaterThan(0);
  for (const phrase of phrases) {
    const identity = deriveIdentity(phrase);
    const secrets = [phrase, bytesToHex(identity.signingKey), bytesToHex(identity.encKey)];
    for (const call of traffic) {
      for (const secret of secrets) {
        expect(call.url, `${call.method} ${call.url} leaks key material`).not.toContain(secret);
        expect(call.body, `${call.method} ${call.url} body leaks key material`).not.toContain(secret);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// App boot + DOM driving
// ---------------------------------------------------------------------------

let current: App | null = null;

export async function bootApp(): Promise<App> {
  current?.stop();
  sessionStorage.clear();
  document.body.innerHTML = '<div id="app"></div>';
  window.history.replaceState(null, '', window.location.pathname);
  recordTraffic();
  const app = createApp(document.getElementById('app')!, gatewayUrl());
  current = app;
  await app.start();
  return app;
}

export async function waitFor<T>(
  check: () => T | null | undefined | false | Promise<T | null | undefined | false>,
  label = 'condition',
  timeoutMs = 20_000,
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  let last: unknown = 'never ran';
  while (Date.now() < deadline) {
    try {
      const result = await check();
      if (result) return result;
      last = result;
    } catch (error) {
      last = error;
    }
    await new Promise(resolve => setTimeout(resolve, 50));
  }
  throw new Error(`timed out waiting for ${label} (last: ${String(last)})`);
}

export function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`no element #${id}`);
  return node as T;
}

export async function signInAs(app: App, phrase: string): Promise<void> {
  await app.navigate('#/login');
  byId<HTMLInputElement>('login-phrase').value = phrase;
  byId<HTMLButtonElement>('login-submit').click();
  await waitFor(() => app.session !== null, `session for ${phrase}`);
  await waitFor(() => app.view.dataset.view !== 'login', 'navigation to role home');
}

// A second actor outside the page under test (used to create races and
// fixtures). Same wire protocol, no DOM.
export async function headlessSession(phrase: string): Promise<Client> {
  const identity = deriveIdentity(phrase);
  const api = new Client(gatewayUrl());
  const challenge = await api.challenge(identity.address);
  const granted = await api.login(identity.address, signLogin(identity, challenge.nonce));
  api.token = granted.token;
  api.signer = bytes => signPrepared(identity, bytes);
  return api;
}

// ---------------------------------------------------------------------------
// Gateway permission probes. A route counts as permitted when its read
// calls succeed and its characteristic mutation is not turned away at the
// door (401/403). Mutations aim at targets that cannot exist, so a probe
// that clears RBAC still changes nothing: it dies on validation instead.
// ---------------------------------------------------------------------------

function loads(promise: Promise<unknown>): Promise<boolean> {
  return promise.then(
    () => true,
    error => {
      if (error instanceof ApiError) return false;
      throw error;
    },
  );
}

function notDenied(promise: Promise<unknown>): Promise<boolean> {
  return promise.then(
    () => true,
    error => {
      if (error instanceof ApiError) return error.status !== 401 && error.status !== 403;
      throw error;
    },
  );
}

async function allOf(...checks: Promise<boolean>[]): Promise<boolean> {
  return (await Promise.all(checks)).every(Boolean);
}

async function sealedLabProbe(api: Client): Promise<unknown> {
  const keys = await api.userKeys(deriveIdentity(PHRASES.patient).address);
  const sealed = sealRecord(utf8ToBytes('{}'), [
    { address: keys.address, encPublicKeyHex: keys.enc_public_key },
  ]);
  return api.submitLabResult({ patient: keys.address, test_id: 999999, values: {}, sealed });
}

export async function gatewayAllows(api: Client, hash: string): Promise<boolean> {
  const doctor = deriveIdentity(PHRASES.doctor).address;
  const probeDate = '2026-09-20';
  switch (hash) {
    case '#/login':
      return true; // public by construction
    case '#/schedule':
      return allOf(
        loads(api.availability(doctor, probeDate)),
        notDenied(api.bookAppointment({
          doctor: GHOST, date: probeDate, slot: 0, purpose: 'probe', priority: '',
        })),
      );
    case '#/history':
      return loads(api.patientHistory());
    case '#/dashboard':
    case '#/agenda':
      return loads(api.doctorAgenda(probeDate));
    case '#/lab-entry':
      return allOf(loads(api.labdefs()), notDenied(sealedLabProbe(api)));
    case '#/ereports':
      return loads(api.ereports());
    case '#/admin/patients':
      return allOf(
        loads(api.adminUsers()),
        notDenied(api.setUserStatus(GHOST, 'active')),
      );
    case '#/admin/medications':
      return allOf(
        loads(api.medications()),
        notDenied(api.adjustStock(999_999, 1)),
      );
    case '#/admin/laboratory':
      return allOf(
        loads(api.labdefs()),
        notDenied(api.addLabDefinition({
          test_name: 'probe',
          parameters: [{ name: 'P', unit: 'u', ref_min: 'not-a-number', ref_max: '1' }],
        })),
      );
    case '#/admin/data':
      return allOf(loads(api.exportDataset('medication', 'csv')), loads(api.audit()));
    default:
      throw new Error(`no gateway probe for route ${hash}`);
  }
}
