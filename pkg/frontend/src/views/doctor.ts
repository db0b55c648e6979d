import type { App } from '../app';
import { ApiError, Appointment, AppointmentPatch, Medication } from '../api';
import { sealRecord, utf8ToBytes } from '../keystore';
import { banner, clear, el, labeled, shortAddress, table, toast, todayDate } from '../ui';
import { historyTables, slotLabel, SLOT_COUNT } from './patient';

export async function renderDashboard(app: App, container: HTMLElement): Promise<void> {
  const session = app.session!;
  const profile = await app.api.profile();
  container.append(el('h1', {}, `Welcome, ${profile.name || shortAddress(session.address)}`));

  const today = todayDate();
  let agenda: Appointment[] = [];
  try {
    agenda = (await app.api.doctorAgenda(today)).appointments;
  } catch (error) {
    toast(error instanceof ApiError ? error.message : 'could not load today', 'error');
  }
  const byStatus = (status: string) => agenda.filter(a => a.status === status).length;
  container.append(
    el('section', { class: 'card summary', id: 'today-summary' },
      el('h2', {}, `Today — ${today}`),
      el('p', {},
        `${agenda.length} appointment(s): ${byStatus('requested')} requested, ` +
        `${byStatus('confirmed')} confirmed, ${byStatus('completed')} completed.`),
      el('p', {}, el('a', { href: '#/agenda' }, 'Open the agenda')),
    ),
  );

  // Record lookup: works for patients under this doctor's care or with a grant.
  const patient = el('input', {
    type: 'text', id: 'lookup-patient', placeholder: 'patient address', size: '44',
  });
  const lookupButton = el('button', { type: 'button', id: 'lookup-load' }, 'Open record');
  const result = el('div', { id: 'lookup-result' });
  lookupButton.addEventListener('click', () => {
    void (async () => {
      clear(result);
      try {
        const [history, medications, definitions] = await Promise.all([
          app.api.patientHistory(patient.value.trim()),
          app.api.medications().then(r => r.medications),
          app.api.labdefs().then(r => r.definitions),
        ]);
        result.append(
          el('h2', {}, `Record of ${shortAddress(history.patient)}`),
          ...historyTables(
            history,
            new Map(medications.map(m => [m.id, m.name])),
            new Map(definitions.map(d => [d.id, d.test_name])),
          ),
        );
      } catch (error) {
        const detail = error instanceof ApiError ? error.message : 'lookup failed';
        toast(detail, 'error');
        result.append(banner('error', detail));
      }
    })();
  });
  container.append(
    el('section', { class: 'card' },
      el('h2', {}, 'Patient record lookup'),
      el('div', { class: 'row' }, labeled('Patient', patient), lookupButton),
      result,
    ),
  );
}

export async function renderAgenda(app: App, container: HTMLElement): Promise<void> {
  container.append(el('h1', {}, 'Agenda'));

  const date = el('input', { type: 'date', id: 'agenda-date' });
  date.value = todayDate();
  const loadButton = el('button', { type: 'button', id: 'agenda-load' }, 'Load');
  const status = el('div', { class: 'status', id: 'agenda-status' });
  const list = el('div', { id: 'agenda-list' });
  const medications = (await app.api.medications()).medications;

  const setStatus = (node: HTMLElement) => {
    clear(status);
    status.append(node);
  };

  async function refresh(): Promise<void> {
    clear(list);
    try {
      const agenda = await app.api.doctorAgenda(date.value);
      if (agenda.appointments.length === 0) {
        list.append(el('p', { class: 'hint' }, 'no appointments on this day'));
      }
      for (const appointment of agenda.appointments) {
        list.append(appointmentCard(appointment));
      }
    } catch (error) {
      const detail = error instanceof ApiError ? error.message : 'could not load agenda';
      list.append(banner('error', detail));
    }
  }

  function patchAction(label: string, attrs: Record<string, string>,
                       id: number, patch: AppointmentPatch): HTMLButtonElement {
    const button = el('button', { type: 'button', ...attrs }, label);
    button.addEventListener('click', () => {
      void (async () => {
        try {
          const receipt = await app.api.updateAppointment(id, patch);
          setStatus(banner('ok', `${label.toLowerCase()} — tx `,
            el('code', { class: 'tx-id', 'data-tx': receipt.tx_id }, receipt.tx_id)));
          await refresh(); // pessimistic: show what the gateway committed
        } catch (error) {
          toast(error instanceof ApiError ? error.message : `${label} failed`, 'error');
          await refresh();
        }
      })();
    });
    return button;
  }

  function appointmentCard(a: Appointment): HTMLElement {
    const card = el('section', {
      class: `card appointment ${a.status}`,
      'data-appointment': String(a.id),
    });
    card.append(
      el('h3', {}, `${a.slot_label} — ${shortAddress(a.patient)}`),
      el('p', {},
        el('span', { class: `pill ${a.status}` }, a.status),
        ` purpose: ${a.purpose || '—'}`,
        a.priority ? ` · priority: ${a.priority}` : ''),
    );
    if (a.status === 'requested') {
      card.append(el('div', { class: 'row' },
        patchAction('Confirm', { 'data-confirm': String(a.id) }, a.id, { status: 'confirmed' }),
        patchAction('Cancel', { 'data-cancel': String(a.id) }, a.id, { status: 'cancelled' }),
      ));
    } else if (a.status === 'confirmed') {
      card.append(completionForm(a));
      card.append(patchAction('Cancel', { 'data-cancel': String(a.id) }, a.id, { status: 'cancelled' }));
    } else if (a.status === 'completed') {
      card.append(
        el('p', { class: 'notes' }, `observations: ${a.observation_notes || '—'}`),
        el('p', { class: 'notes' }, `improvement: ${a.improvement_notes || '—'}`),
      );
      if (a.next_appointment_date) {
        card.append(el('p', { class: 'notes' },
          `next appointment: ${a.next_appointment_date} ${slotLabel(a.next_appointment_slot ?? 0)}`));
      }
    }
    return card;
  }

  function completionForm(a: Appointment): HTMLElement {
    const observation = el('textarea', { 'data-observation': '', rows: '2', placeholder: 'observation notes' });
    const improvement = el('textarea', { 'data-improvement': '', rows: '2', placeholder: 'improvement notes' });
    const rows = el('div', { class: 'prescription-rows' });

    function addRow(): void {
      const medication = el('select', { 'data-medication': '' });
      for (const m of medications) {
        medication.append(el('option', { value: String(m.id) }, `${m.name} (stock ${m.stock})`));
      }
      const dosage = el('input', { type: 'text', 'data-dosage': '', placeholder: 'dosage, e.g. 1 x 3 daily' });
      rows.append(el('div', { class: 'row prescription-row' },
        labeled('Medication', medication), labeled('Dosage', dosage)));
    }

    const addButton = el('button', { type: 'button', 'data-add-prescription': String(a.id) },
      'Add prescription');
    addButton.addEventListener('click', addRow);

    // "Next appointment: yes/no" — yes only reveals the optional fields.
    const group = `next-${a.id}`;
    const yes = el('input', { type: 'radio', name: group, value: 'yes', 'data-next-yes': '' });
    const no = el('input', { type: 'radio', name: group, value: 'no', 'data-next-no': '' });
    no.checked = true;
    const nextDate = el('input', { type: 'date', 'data-next-date': '' });
    const nextSlot = el('select', { 'data-next-slot': '' });
    for (let slot = 0; slot < SLOT_COUNT; slot += 1) {
      nextSlot.append(el('option', { value: String(slot) }, slotLabel(slot)));
    }
    const nextFields = el('div', { class: 'row next-fields hidden' },
      labeled('Date', nextDate), labeled('Slot', nextSlot));
    yes.addEventListener('change', () => nextFields.classList.remove('hidden'));
    no.addEventListener('change', () => nextFields.classList.add('hidden'));

    const completeButton = el('button', { type: 'button', 'data-complete': String(a.id) },
      'Complete visit');
    completeButton.addEventListener('click', () => {
      void (async () => {
        const patch: AppointmentPatch = {
          status: 'completed',
          observation_notes: observation.value,
          improvement_notes: improvement.value,
        };
        if (yes.checked) {
          patch.next_appointment_date = nextDate.value;
          patch.next_appointment_slot = Number(nextSlot.value);
        }
        const prescriptions: { medication_id: number; dosage: string }[] = [];
        for (const row of rows.querySelectorAll('.prescription-row')) {
          const medication = row.querySelector('select') as HTMLSelectElement;
          const dosage = row.querySelector('input') as HTMLInputElement;
          if (dosage.value.trim()) {
            prescriptions.push({ medication_id: Number(medication.value), dosage: dosage.value });
          }
        }
        try {
          const receipt = await app.api.updateAppointment(a.id, patch);
          for (const rx of prescriptions) {
            await app.api.prescribe({ appointment_id: a.id, ...rx });
          }
          setStatus(banner('ok', 'visit completed — tx ',
            el('code', { class: 'tx-id', 'data-tx': receipt.tx_id }, receipt.tx_id)));
        } catch (error) {
          toast(error instanceof ApiError ? error.message : 'completion failed', 'error');
        }
        await refresh();
      })();
    });

    return el('div', { class: 'completion' },
      labeled('Observations', observation),
      labeled('Improvement', improvement),
      rows,
      addButton,
      el('div', { class: 'row' },
        el('span', { class: 'field-label' }, 'Next appointment?'),
        el('label', {}, yes, ' yes'),
        el('label', {}, no, ' no')),
      nextFields,
      completeButton,
    );
  }

  loadButton.addEventListener('click', () => void refresh());
  await refresh();
  container.append(
    el('div', { class: 'row' }, labeled('Date', date), loadButton),
    status,
    list,
  );
}

export async function renderLabEntry(app: App, container: HTMLElement): Promise<void> {
  container.append(el('h1', {}, 'Laboratory entry'));
  const session = app.session!;
  const definitions = (await app.api.labdefs()).definitions;

  const patient = el('input', {
    type: 'text', id: 'lab-patient', placeholder: 'patient address', size: '44',
  });
  const test = el('select', { id: 'lab-test' });
  for (const definition of definitions) {
    test.append(el('option', { value: String(definition.id) }, definition.test_name));
  }
  const params = el('div', { id: 'lab-params' });
  const status = el('div', { class: 'status', id: 'lab-status' });

  function renderParams(): void {
    clear(params);
    const definition = definitions.find(d => d.id === Number(test.value));
    if (!definition) return;
    for (const parameter of definition.parameters) {
      const input = el('input', { type: 'text', 'data-parameter': parameter.name });
      params.append(labeled(
        `${parameter.name} (${parameter.unit}, ${parameter.ref_min}–${parameter.ref_max})`,
        input,
      ));
    }
  }
  test.addEventListener('change', renderParams);
  renderParams();

  const submitButton = el('button', { type: 'button', id: 'lab-submit' }, 'Seal & submit');
  submitButton.addEventListener('click', () => {
    void (async () => {
      clear(status);
      const values: Record<string, string> = {};
      for (const input of params.querySelectorAll<HTMLInputElement>('[data-parameter]')) {
        values[input.dataset.parameter!] = input.value;
      }
      const testId = Number(test.value);
      try {
        // Seal in the browser: wrapped to the patient (required) and to the
        // submitting doctor, so both can decrypt later. The gateway only
        // ever receives ciphertext and wrapped keys.
        const keys = await app.api.userKeys(patient.value.trim());
        const plaintext = utf8ToBytes(JSON.stringify({ patient: keys.address, test_id: testId, values }));
        const sealed = sealRecord(plaintext, [
          { address: keys.address, encPublicKeyHex: keys.enc_public_key },
          { address: session.address, encPublicKeyHex: session.identity.encPublicKeyHex },
        ]);
        const receipt = await app.api.submitLabResult({
          patient: keys.address, test_id: testId, values, sealed,
        });
        status.append(banner('ok', 'result recorded — tx ',
          el('code', { class: 'tx-id', 'data-tx': receipt.tx_id }, receipt.tx_id)));
        status.append(table(
          ['Parameter', 'Value', 'Flag'],
          Object.keys(receipt.result.values).sort().map(name => [
            name,
            receipt.result.values[name],
            receipt.result.flags[name] ?? '',
          ]),
        ));
      } catch (error) {
        const detail = error instanceof ApiError ? error.message : 'submission failed';
        toast(detail, 'error');
        status.append(banner('error', detail));
      }
    })();
  });

  container.append(
    el('section', { class: 'card' },
      el('div', { class: 'row' }, labeled('Patient', patient), labeled('Test', test)),
      params,
      submitButton,
      status,
    ),
  );
}

export async function renderEReports(app: App, container: HTMLElement): Promise<void> {
  container.append(el('h1', {}, 'E-reports'));
  const [report, medications, definitions] = await Promise.all([
    app.api.ereports(),
    app.api.medications().then(r => r.medications),
    app.api.labdefs().then(r => r.definitions),
  ]);
  const medicationName = new Map<number, string>(medications.map((m: Medication) => [m.id, m.name]));
  const testName = new Map(definitions.map(d => [d.id, d.test_name]));

  const detail = (event: Record<string, unknown>): string => {
    switch (event.kind) {
      case 'appointment':
        return `${event.date} ${slotLabel(Number(event.slot))} — ${event.purpose || 'visit'}`;
      case 'lab_result':
        return testName.get(Number(event.test_id)) ?? `test #${event.test_id}`;
      case 'prescription':
        return `${medicationName.get(Number(event.medication_id)) ?? `medication #${event.medication_id}`}` +
          ` for appointment #${event.appointment_id}`;
      default:
        return '';
    }
  };

  container.append(table(
    ['Kind', 'Id', 'Patient', 'Detail'],
    report.events.map(event => [
      event.kind,
      String(event.id),
      shortAddress(event.patient),
      detail(event),
    ]),
  ));
  if (report.events.length === 0) container.append(el('p', { class: 'hint' }, 'nothing completed yet'));
}
