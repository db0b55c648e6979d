// Sign-in page behaviors: failures stay inline on the page (no navigation),
// a pending account gets the activation notice, and a signature the gateway
// cannot verify is rejected — exercised by corrupting it in transit.

import { describe, expect, it } from 'vitest';
import { bootApp, byId, PHRASES, signInAs, waitFor } from './helpers';

describe('sign-in page', () => {
  it('shows an unknown account inline and stays on the page', async () => {
    const app = await bootApp();
    byId<HTMLInputElement>('login-phrase').value = 'no-such-account-phrase';
    byId<HTMLButtonElement>('login-submit').click();
    const note = await waitFor(
      () => document.querySelector('#login-status .banner.error'),
      'inline error',
    );
    expect(note.textContent).toContain('sign-in failed');
    expect(window.location.hash).toBe('#/login');
    expect(app.session).toBeNull();
  });

  it('rejects a signature tampered in transit, inline', async () => {
    const app = await bootApp();
    const realFetch = globalThis.fetch;
    globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
      if (String(input).endsWith('/auth/login') && typeof init?.body === 'string') {
        const body = JSON.parse(init.body);
        body.signature = (body.signature[0] === '0' ? '1' : '0') + body.signature.slice(1);
        init = { ...init, body: JSON.stringify(body) };
      }
      return realFetch(input, init);
    }) as typeof fetch;
    try {
      byId<HTMLInputElement>('login-phrase').value = PHRASES.patient;
      byId<HTMLButtonElement>('login-submit').click();
      const note = await waitFor(
        () => document.querySelector('#login-status .banner.error'),
        'inline auth error',
      );
      expect(note.textContent).toContain('auth_failed');
      expect(window.location.hash).toBe('#/login');
      expect(app.session).toBeNull();
    } finally {
      globalThis.fetch = realFetch;
    }
  });

  it('tells a freshly registered (pending) account to await activation', async () => {
    const app = await bootApp();
    const phrase = `fresh-${Date.now()}`;
    byId<HTMLInputElement>('register-name').value = 'Test Person';
    byId<HTMLSelectElement>('register-role').value = 'patient';
    byId<HTMLInputElement>('register-phrase').value = phrase;
    byId<HTMLButtonElement>('register-submit').click();
    const created = await waitFor(
      () => document.querySelector('#register-status .banner.ok'),
      'registration receipt',
    );
    expect(created.textContent).toContain('account awaiting activation');

    byId<HTMLInputElement>('login-phrase').value = phrase;
    byId<HTMLButtonElement>('login-submit').click();
    const note = await waitFor(
      () => document.querySelector('#login-status .banner.notice'),
      'pending-account notice',
    );
    expect(note.textContent).toContain('account awaiting activation');
    expect(window.location.hash).toBe('#/login');
    expect(app.session).toBeNull();
  });

  it('routes each demo account to its role home after sign-in', async () => {
    const expectations: [string, string][] = [
      [PHRASES.patient, '#/schedule'],
      [PHRASES.doctor, '#/dashboard'],
      [PHRASES.admin, '#/admin/patients'],
    ];
    for (const [phrase, home] of expectations) {
      const app = await bootApp();
      await signInAs(app, phrase);
      expect(window.location.hash, `${phrase} home`).toBe(home);
      expect(app.api.token).not.toBeNull();
    }
  });
});
