import type { App } from '../app';
import { ApiError, Role } from '../api';
import { deriveIdentity, signPrepared } from '../keystore';
import { banner, clear, el, labeled } from '../ui';

// Fig-7 style combined login / registration page. Both forms work purely on
// a locally derived key pair: the gateway never receives the key phrase.

export async function renderLogin(app: App, container: HTMLElement): Promise<void> {
  container.append(el('h1', {}, 'MedCare'));

  if (app.session) {
    const note = banner('notice', `already signed in as ${app.session.role} — `);
    const home = el('a', { href: app.homeHash() }, 'go to your dashboard');
    note.append(home);
    container.append(note);
    return;
  }

  // -- sign in -------------------------------------------------------------
  const phrase = el('input', { type: 'password', id: 'login-phrase', autocomplete: 'off' });
  const loginStatus = el('div', { class: 'status', id: 'login-status' });
  const loginButton = el('button', { type: 'button', id: 'login-submit' }, 'Sign in');
  loginButton.addEventListener('click', () => {
    void (async () => {
      clear(loginStatus);
      if (!phrase.value) {
        loginStatus.append(banner('error', 'enter your key phrase'));
        return;
      }
      try {
        await app.signIn(phrase.value);
        await app.navigate(app.homeHash());
      } catch (error) {
        // stay on the page: auth problems are shown inline
        if (error instanceof ApiError && error.code === 'account_inactive') {
          loginStatus.append(banner('notice', 'account awaiting activation'));
        } else if (error instanceof ApiError) {
          loginStatus.append(banner('error', `sign-in failed — ${error.message}`));
        } else {
          loginStatus.append(banner('error', 'sign-in failed'));
        }
      }
    })();
  });

  container.append(
    el(
      'section',
      { class: 'card', id: 'login-card' },
      el('h2', {}, 'Sign in'),
      el('p', { class: 'hint' },
        'Your key phrase never leaves this browser; it only signs a one-time challenge.'),
      labeled('Key phrase', phrase),
      loginButton,
      loginStatus,
    ),
  );

  // -- register ------------------------------------------------------------
  const name = el('input', { type: 'text', id: 'register-name' });
  const role = el('select', { id: 'register-role' });
  for (const option of ['patient', 'doctor', 'admin']) {
    role.append(el('option', { value: option }, option));
  }
  const newPhrase = el('input', { type: 'password', id: 'register-phrase', autocomplete: 'off' });
  const registerStatus = el('div', { class: 'status', id: 'register-status' });
  const registerButton = el('button', { type: 'button', id: 'register-submit' }, 'Register');
  registerButton.addEventListener('click', () => {
    void (async () => {
      clear(registerStatus);
      if (!name.value || !newPhrase.value) {
        registerStatus.append(banner('error', 'name and key phrase are required'));
        return;
      }
      const identity = deriveIdentity(newPhrase.value);
      try {
        const created = await app.api.registerUser(
          {
            address: identity.address,
            role: role.value as Role,
            public_key: identity.publicKeyHex,
            enc_public_key: identity.encPublicKeyHex,
            name: name.value,
            demographics: {},
          },
          bytes => signPrepared(identity, bytes),
        );
        registerStatus.append(
          banner(
            'ok',
            `registered as ${identity.address} (tx ${created.tx_id}) — `,
            el('strong', {}, 'account awaiting activation'),
          ),
        );
      } catch (error) {
        const detail = error instanceof ApiError ? error.message : 'registration failed';
        registerStatus.append(banner('error', detail));
      }
    })();
  });

  container.append(
    el(
      'section',
      { class: 'card', id: 'register-card' },
      el('h2', {}, 'Register'),
      labeled('Full name', name),
      labeled('Role', role),
      labeled('Choose a key phrase', newPhrase),
      registerButton,
      registerStatus,
    ),
  );

  container.append(
    el(
      'details',
      { class: 'demo-accounts' },
      el('summary', {}, 'Demo accounts'),
      el('p', {}, 'After seed-demo, these key phrases exist: demo-admin, demo-doctor-1, demo-doctor-2, demo-patient-1, demo-patient-2, demo-patient-3.'),
    ),
  );
}
