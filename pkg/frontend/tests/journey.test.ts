// Criterion: one scripted pass through the clinical flow against a seeded
// node — the patient books a slot in the browser, the doctor finds it on the
// agenda and completes the visit with notes and a prescription, and the
// patient's history page shows all of it.

import { describe, expect, it } from 'vitest';
import { deriveIdentity } from '../src/keystore';
import {
  assertNoKeyMaterialOnWire,
  bootApp,
  byId,
  headlessSession,
  PHRASES,
  signInAs,
  waitFor,
} from './helpers';

const DOCTOR_ADDRESS = deriveIdentity(PHRASES.doctor).address;

describe('clinical journey', () => {
  it('patient books, doctor completes with a prescription, patient sees history', async () => {
    const date = '2026-09-03';

    // -- patient books slot 5 (09:40 - 10:00) ------------------------------
    let app = await bootApp();
    await signInAs(app, PHRASES.patient);
    await app.navigate('#/schedule');

    // the grid renders all 24 slots even before a doctor-day is loaded
    expect(document.querySelectorAll('#slot-grid .slot').length).toBe(24);

    byId<HTMLInputElement>('schedule-doctor').value = DOCTOR_ADDRESS;
    byId<HTMLInputElement>('schedule-date').value = date;
    byId<HTMLButtonElement>('schedule-load').click();
    await waitFor(
      () => document.querySelector('#slot-grid .slot:not([disabled])'),
      'free slots after load',
    );
    expect(document.querySelectorAll('#slot-grid .slot').length).toBe(24);
    // an empty day: every one of the 24 slots is bookable
    expect(document.querySelectorAll('#slot-grid .slot:not([disabled])').length).toBe(24);

    const slot = document.querySelector('#slot-grid .slot[data-slot="5"]') as HTMLButtonElement;
    expect(slot.disabled).toBe(false);
    slot.click();
    byId<HTMLInputElement>('schedule-purpose').value = 'knee pain after running';
    byId<HTMLButtonElement>('schedule-book').click();

    const tx = await waitFor(
      () => document.querySelector('#schedule-status .tx-id'),
      'booking receipt',
    );
    expect(tx.textContent).toMatch(/^[0-9a-f]{64}$/);
    // pessimistic refresh: the grid now shows the slot as taken
    const takenSlot = document.querySelector('#slot-grid .slot[data-slot="5"]') as HTMLButtonElement;
    expect(takenSlot.disabled).toBe(true);
    expect(takenSlot.classList.contains('taken')).toBe(true);
    expect(document.querySelectorAll('#slot-grid .slot:not([disabled])').length).toBe(23);

    // -- doctor confirms and completes the visit ---------------------------
    app = await bootApp();
    await signInAs(app, PHRASES.doctor);
    await app.navigate('#/agenda');
    byId<HTMLInputElement>('agenda-date').value = date;
    byId<HTMLButtonElement>('agenda-load').click();

    const requested = await waitFor(
      () => document.querySelector<HTMLElement>('#agenda-list .appointment.requested'),
      'requested appointment on the agenda',
    );
    expect(requested.textContent).toContain('09:40 - 10:00');
    expect(requested.textContent).toContain('knee pain after running');
    const id = requested.dataset.appointment!;

    (requested.querySelector(`[data-confirm="${id}"]`) as HTMLButtonElement).click();
    const confirmed = await waitFor(
      () => document.querySelector<HTMLElement>(
        `#agenda-list .appointment.confirmed[data-appointment="${id}"]`),
      'appointment confirmed',
    );

    (confirmed.querySelector('[data-observation]') as HTMLTextAreaElement).value =
      'mild effusion, stable gait';
    (confirmed.querySelector('[data-improvement]') as HTMLTextAreaElement).value =
      'rest, ice, follow self-care plan';
    (confirmed.querySelector(`[data-add-prescription="${id}"]`) as HTMLButtonElement).click();
    const row = confirmed.querySelector('.prescription-row')!;
    const medication = row.querySelector('select') as HTMLSelectElement;
    const medicationName = medication.selectedOptions[0].textContent!.replace(/ \(stock \d+\)$/, '');
    (row.querySelector('input') as HTMLInputElement).value = '1 tablet every 8 hours';
    // leave the next-appointment toggle on "no"
    (confirmed.querySelector(`[data-complete="${id}"]`) as HTMLButtonElement).click();

    const completed = await waitFor(
      () => document.querySelector<HTMLElement>(
        `#agenda-list .appointment.completed[data-appointment="${id}"]`),
      'appointment completed',
    );
    expect(completed.textContent).toContain('mild effusion, stable gait');

    // the visit also lands in the doctor's e-reports
    await app.navigate('#/ereports');
    expect(app.view.textContent).toContain('appointment');
    expect(app.view.textContent).toContain('knee pain after running');

    // -- patient reads the outcome -----------------------------------------
    app = await bootApp();
    await signInAs(app, PHRASES.patient);
    await app.navigate('#/history');
    const text = app.view.textContent!;
    expect(text).toContain('knee pain after running');
    expect(text).toContain('completed');
    expect(text).toContain('mild effusion, stable gait');
    expect(text).toContain(medicationName);
    expect(text).toContain('1 tablet every 8 hours');

    assertNoKeyMaterialOnWire([PHRASES.patient, PHRASES.doctor]);
  });

  it('a lost booking race highlights the conflict and books nothing', async () => {
    const date = '2026-09-04';
    const app = await bootApp();
    await signInAs(app, PHRASES.patient2);
    await app.navigate('#/schedule');
    byId<HTMLInputElement>('schedule-doctor').value = DOCTOR_ADDRESS;
    byId<HTMLInputElement>('schedule-date').value = date;
    byId<HTMLButtonElement>('schedule-load').click();
    await waitFor(
      () => document.querySelector('#slot-grid .slot:not([disabled])'),
      'free slots after load',
    );
    (document.querySelector('#slot-grid .slot[data-slot="3"]') as HTMLButtonElement).click();

    // another patient takes the same slot while this grid is stale
    const rival = await headlessSession(PHRASES.patient);
    await rival.bookAppointment({
      doctor: DOCTOR_ADDRESS, date, slot: 3, purpose: 'sore throat', priority: '',
    });

    byId<HTMLInputElement>('schedule-purpose').value = 'checkup';
    byId<HTMLButtonElement>('schedule-book').click();

    const conflict = await waitFor(
      () => document.querySelector<HTMLButtonElement>('#slot-grid .slot.conflict[data-slot="3"]'),
      'conflict marker after the 409',
    );
    expect(conflict.disabled).toBe(true); // refreshed grid shows it as taken
    expect(document.querySelectorAll('#slot-grid .slot').length).toBe(24);
    const bannerText = document.querySelector('#schedule-status .banner.error')!.textContent!;
    expect(bannerText).toContain('just taken');

    // no phantom appointment for the loser
    const history = await app.api.patientHistory();
    expect(history.appointments.filter(a => a.date === date)).toHaveLength(0);
  });
});
