import type { App } from '../app';
import { ApiError, Availability, Grant, History } from '../api';
import { banner, clear, el, fmtTimestamp, labeled, shortAddress, table, toast } from '../ui';

export const SLOT_COUNT = 24;

// Slot labels mirror the ledger's fixed grid: 24 twenty-minute intervals
// starting at 08:00, "08:00 - 08:20" through "15:40 - 16:00".
export function slotLabel(slot: number): string {
  const start = 8 * 60 + slot * 20;
  const end = start + 20;
  const fmt = (minutes: number) =>
    `${String(Math.floor(minutes / 60)).padStart(2, '0')}:${String(minutes % 60).padStart(2, '0')}`;
  return `${fmt(start)} - ${fmt(end)}`;
}

function defaultBookingDate(): string {
  const tomorrow = new Date(Date.now() + 24 * 3600 * 1000);
  return tomorrow.toISOString().slice(0, 10);
}

export async function renderSchedule(app: App, container: HTMLElement): Promise<void> {
  container.append(el('h1', {}, 'Schedule an appointment'));

  const doctor = el('input', {
    type: 'text', id: 'schedule-doctor', placeholder: 'doctor address', size: '44',
  });
  const date = el('input', { type: 'date', id: 'schedule-date' });
  date.value = defaultBookingDate();
  const loadButton = el('button', { type: 'button', id: 'schedule-load' }, 'Show availability');
  const status = el('div', { class: 'status', id: 'schedule-status' });
  const grid = el('div', { class: 'slot-grid', id: 'slot-grid' });
  const purpose = el('input', { type: 'text', id: 'schedule-purpose', placeholder: 'reason for the visit' });
  const priority = el('select', { id: 'schedule-priority' });
  for (const level of ['normal', 'urgent']) priority.append(el('option', { value: level }, level));
  const bookButton = el('button', { type: 'button', id: 'schedule-book', disabled: '' }, 'Book selected slot');

  let availability: Availability | null = null;
  let selected: number | null = null;
  let conflictSlot: number | null = null;

  // The grid always shows all 24 slots; before a doctor-day is loaded they
  // are rendered but not clickable.
  function renderGrid(): void {
    clear(grid);
    const taken = new Set(availability ? availability.taken : []);
    for (let slot = 0; slot < SLOT_COUNT; slot += 1) {
      const button = el('button', { type: 'button', class: 'slot', 'data-slot': String(slot) },
        slotLabel(slot));
      if (availability === null) {
        button.disabled = true;
      } else if (taken.has(slot)) {
        button.disabled = true;
        button.classList.add('taken');
      } else {
        button.addEventListener('click', () => {
          selected = slot;
          conflictSlot = null;
          renderGrid();
        });
      }
      if (slot === selected) button.classList.add('selected');
      if (slot === conflictSlot) button.classList.add('conflict');
      grid.append(button);
    }
    bookButton.disabled = selected === null;
  }

  async function load(): Promise<void> {
    clear(status);
    if (!doctor.value || !date.value) {
      status.append(banner('notice', 'enter a doctor address and a date'));
      return;
    }
    try {
      availability = await app.api.availability(doctor.value.trim(), date.value);
      if (selected !== null && availability.taken.includes(selected)) selected = null;
    } catch (error) {
      availability = null;
      selected = null;
      const detail = error instanceof ApiError ? error.message : 'could not load availability';
      status.append(banner('error', detail));
    }
    renderGrid();
  }

  loadButton.addEventListener('click', () => void load());

  bookButton.addEventListener('click', () => {
    void (async () => {
      if (selected === null || availability === null) return;
      const attempted = selected;
      clear(status);
      try {
        const receipt = await app.api.bookAppointment({
          doctor: availability.doctor,
          date: availability.date,
          slot: attempted,
          purpose: purpose.value,
          priority: priority.value,
        });
        selected = null;
        await load(); // pessimistic: re-read the grid the gateway now has
        status.append(
          banner('ok', 'booked — tx ',
            el('code', { class: 'tx-id', 'data-tx': receipt.tx_id }, receipt.tx_id)),
        );
      } catch (error) {
        if (error instanceof ApiError && error.code === 'slot_taken') {
          // lost the race: refresh and point at the contested slot
          selected = null;
          await load();
          conflictSlot = attempted;
          renderGrid();
          status.append(banner('error', `slot ${slotLabel(attempted)} was just taken — pick another`));
        } else {
          const detail = error instanceof ApiError ? error.message : 'booking failed';
          toast(detail, 'error');
          status.append(banner('error', detail));
        }
      }
    })();
  });

  renderGrid();
  container.append(
    el('section', { class: 'card' },
      el('div', { class: 'row' }, labeled('Doctor', doctor), labeled('Date', date), loadButton),
      grid,
      el('div', { class: 'row' },
        labeled('Purpose', purpose), labeled('Priority', priority), bookButton),
      status,
    ),
  );
}

// The record sections are shared with the doctor's patient lookup, which
// shows the same data for any patient the viewer may read.
export function historyTables(
  history: History,
  medicationName: Map<number, string>,
  testName: Map<number, string>,
): HTMLElement[] {
  const sections: HTMLElement[] = [];

  sections.push(el('h2', {}, 'Appointments'));
  sections.push(
    table(
      ['Date', 'Time', 'Doctor', 'Purpose', 'Status', 'Notes', 'Next appointment'],
      history.appointments.map(a => [
        a.date,
        a.slot_label,
        shortAddress(a.doctor),
        a.purpose,
        el('span', { class: `pill ${a.status}` }, a.status),
        [a.observation_notes, a.improvement_notes].filter(Boolean).join(' / '),
        a.next_appointment_date === null
          ? '—'
          : `${a.next_appointment_date} ${slotLabel(a.next_appointment_slot ?? 0)}`,
      ]),
    ),
  );

  sections.push(el('h2', {}, 'Prescriptions'));
  sections.push(
    table(
      ['Appointment', 'Medication', 'Dosage', 'Doctor'],
      history.prescriptions.map(p => [
        String(p.appointment_id),
        medicationName.get(p.medication_id) ?? `#${p.medication_id}`,
        p.dosage,
        shortAddress(p.doctor),
      ]),
    ),
  );

  sections.push(el('h2', {}, 'Laboratory results'));
  for (const result of history.lab_results) {
    sections.push(
      el('section', { class: 'card lab-result' },
        el('h3', {}, `${testName.get(result.test_id) ?? `test #${result.test_id}`} — ${fmtTimestamp(result.reported_at_ms)}`),
        table(
          ['Parameter', 'Value', 'Flag'],
          Object.keys(result.values).sort().map(parameter => [
            parameter,
            result.values[parameter],
            el('span', { class: `flag ${result.flags[parameter] ?? ''}` },
              result.flags[parameter] ?? ''),
          ]),
        ),
      ),
    );
  }
  if (history.lab_results.length === 0) sections.push(el('p', { class: 'hint' }, 'none yet'));

  sections.push(el('h2', {}, 'Device readings'));
  sections.push(
    table(
      ['When', 'Device', 'Metric', 'Value', 'Flag'],
      history.iot_observations.map(o => [
        fmtTimestamp(o.observed_at_ms),
        o.device_id,
        o.metric,
        `${o.value} ${o.unit}`,
        o.flag,
      ]),
    ),
  );

  return sections;
}

export async function renderHistory(app: App, container: HTMLElement): Promise<void> {
  container.append(el('h1', {}, 'My history'));

  const [history, medications, definitions] = await Promise.all([
    app.api.patientHistory(),
    app.api.medications().then(r => r.medications),
    app.api.labdefs().then(r => r.definitions),
  ]);
  const medicationName = new Map(medications.map(m => [m.id, m.name]));
  const testName = new Map(definitions.map(d => [d.id, d.test_name]));

  container.append(...historyTables(history, medicationName, testName));
  renderGrants(app, container, history);
}

// Grants live on the history page: they are the patient's lever over who
// else can read everything listed above.
function renderGrants(app: App, container: HTMLElement, history: History): void {
  container.append(el('h2', {}, 'Access grants'));
  const grants: Grant[] = history.grants ?? [];
  const rows = grants.map(grant => {
    const cells: (string | Node)[] = [
      String(grant.id),
      shortAddress(grant.grantee),
      grant.scope,
      fmtTimestamp(grant.granted_at_ms),
    ];
    if (grant.revoked_at_ms !== null) {
      cells.push(`revoked ${fmtTimestamp(grant.revoked_at_ms)}`);
    } else {
      const revoke = el('button', { type: 'button', 'data-revoke': String(grant.id) }, 'Revoke');
      revoke.addEventListener('click', () => {
        void (async () => {
          try {
            await app.api.revokeAccess(grant.id);
            await app.navigate('#/history'); // pessimistic reload
          } catch (error) {
            toast(error instanceof ApiError ? error.message : 'revoke failed', 'error');
          }
        })();
      });
      cells.push(revoke);
    }
    return cells;
  });
  container.append(table(['Id', 'Grantee', 'Scope', 'Granted', ''], rows));

  const grantee = el('input', { type: 'text', id: 'grant-grantee', placeholder: 'grantee address', size: '44' });
  const scope = el('input', { type: 'text', id: 'grant-scope', value: 'all' });
  const grantButton = el('button', { type: 'button', id: 'grant-submit' }, 'Grant access');
  grantButton.addEventListener('click', () => {
    void (async () => {
      try {
        await app.api.grantAccess({ grantee: grantee.value.trim(), scope: scope.value.trim() });
        await app.navigate('#/history');
      } catch (error) {
        toast(error instanceof ApiError ? error.message : 'grant failed', 'error');
      }
    })();
  });
  container.append(
    el('div', { class: 'row' }, labeled('Grantee', grantee), labeled('Scope', scope), grantButton),
  );
}
