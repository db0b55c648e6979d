import type { App } from '../app';
import { Account, ApiError, DATASETS, EXPORT_FORMATS } from '../api';
import { saveFile } from '../download';
import { banner, clear, el, fmtTimestamp, labeled, shortAddress, table, toast } from '../ui';

// Admin actions report gateway rejections as toasts and re-render from the
// gateway's answer — the table never shows a change the chain refused.

export async function renderAdminPatients(app: App, container: HTMLElement): Promise<void> {
  container.append(el('h1', {}, 'PATIENT ADMINISTRATION'));
  const { users } = await app.api.adminUsers();

  const statusToggle = (user: Account): HTMLElement => {
    const target = user.status === 'active' ? 'suspended' : 'active';
    const label = target === 'active' ? 'Activate' : 'Suspend';
    const button = el('button', { type: 'button', 'data-status-toggle': user.address }, label);
    button.addEventListener('click', () => {
      void (async () => {
        try {
          await app.api.setUserStatus(user.address, target);
          await app.navigate('#/admin/patients');
        } catch (error) {
          toast(error instanceof ApiError ? error.message : 'status change failed', 'error');
        }
      })();
    });
    return button;
  };

  container.append(table(
    ['Address', 'Name', 'Role', 'Status', 'Registered', ''],
    users.map(user => [
      el('code', {}, shortAddress(user.address)),
      user.name,
      user.role,
      el('span', { class: `pill ${user.status}`, 'data-status-of': user.address }, user.status),
      fmtTimestamp(user.registered_at_ms),
      statusToggle(user),
    ]),
  ));
  container.append(el('p', { class: 'hint' },
    'accounts register themselves from the sign-in page and start out pending; activation happens here'));
}

export async function renderAdminMedications(app: App, container: HTMLElement): Promise<void> {
  container.append(el('h1', {}, 'MEDICATIONS ADMINISTRATION'));
  const { medications } = await app.api.medications();

  const stockEditor = (medicationId: number): HTMLElement => {
    const delta = el('input', {
      type: 'number', 'data-stock-delta': String(medicationId), value: '0',
    });
    const apply = el('button', { type: 'button', 'data-stock-apply': String(medicationId) }, 'Apply');
    apply.addEventListener('click', () => {
      void (async () => {
        try {
          await app.api.adjustStock(medicationId, Number(delta.value));
          await app.navigate('#/admin/medications');
        } catch (error) {
          toast(error instanceof ApiError ? error.message : 'stock change failed', 'error');
        }
      })();
    });
    return el('span', { class: 'row' }, delta, apply);
  };

  container.append(table(
    ['Id', 'Name', 'Stock', 'Adjust'],
    medications.map(m => [
      String(m.id),
      m.name,
      el('span', { 'data-stock-of': String(m.id) }, String(m.stock)),
      stockEditor(m.id),
    ]),
  ));

  const name = el('input', { type: 'text', id: 'medication-name', placeholder: 'medication name' });
  const stock = el('input', { type: 'number', id: 'medication-stock', value: '0' });
  const add = el('button', { type: 'button', id: 'medication-add' }, 'Add medication');
  add.addEventListener('click', () => {
    void (async () => {
      try {
        await app.api.addMedication({ name: name.value.trim(), stock: Number(stock.value) });
        await app.navigate('#/admin/medications');
      } catch (error) {
        toast(error instanceof ApiError ? error.message : 'could not add medication', 'error');
      }
    })();
  });
  container.append(
    el('section', { class: 'card' },
      el('h2', {}, 'New medication'),
      el('div', { class: 'row' }, labeled('Name', name), labeled('Initial stock', stock), add),
    ),
  );
}

export async function renderAdminLaboratory(app: App, container: HTMLElement): Promise<void> {
  container.append(el('h1', {}, 'LABORATORY ADMINISTRATION'));
  const { definitions } = await app.api.labdefs();

  for (const definition of definitions) {
    container.append(
      el('section', { class: 'card lab-definition', 'data-labdef': String(definition.id) },
        el('h2', {}, `${definition.test_name} (#${definition.id})`),
        table(
          ['Name', 'Unit', 'Reference Min', 'Reference Max'],
          definition.parameters.map(p => [p.name, p.unit, p.ref_min, p.ref_max]),
        ),
      ),
    );
  }
  if (definitions.length === 0) {
    container.append(el('p', { class: 'hint' }, 'no laboratory tests defined yet'));
  }

  // Definition editor: parameter rows mirror the table above.
  const testName = el('input', { type: 'text', id: 'labdef-name', placeholder: 'test name' });
  const rows = el('div', { id: 'labdef-rows' });
  function addRow(): void {
    rows.append(el('div', { class: 'row labdef-row' },
      el('input', { type: 'text', 'data-param-name': '', placeholder: 'Name' }),
      el('input', { type: 'text', 'data-param-unit': '', placeholder: 'Unit' }),
      el('input', { type: 'text', 'data-param-min': '', placeholder: 'Reference Min' }),
      el('input', { type: 'text', 'data-param-max': '', placeholder: 'Reference Max' }),
    ));
  }
  addRow();
  const addRowButton = el('button', { type: 'button', id: 'labdef-add-row' }, 'Add parameter');
  addRowButton.addEventListener('click', addRow);

  const create = el('button', { type: 'button', id: 'labdef-create' }, 'Create test');
  create.addEventListener('click', () => {
    void (async () => {
      const parameters = [...rows.querySelectorAll('.labdef-row')]
        .map(row => ({
          name: (row.querySelector('[data-param-name]') as HTMLInputElement).value.trim(),
          unit: (row.querySelector('[data-param-unit]') as HTMLInputElement).value.trim(),
          ref_min: (row.querySelector('[data-param-min]') as HTMLInputElement).value.trim(),
          ref_max: (row.querySelector('[data-param-max]') as HTMLInputElement).value.trim(),
        }))
        .filter(p => p.name);
      try {
        await app.api.addLabDefinition({ test_name: testName.value.trim(), parameters });
        await app.navigate('#/admin/laboratory');
      } catch (error) {
        toast(error instanceof ApiError ? error.message : 'could not create test', 'error');
      }
    })();
  });

  container.append(
    el('section', { class: 'card' },
      el('h2', {}, 'New laboratory test'),
      labeled('Test name', testName),
      rows,
      el('div', { class: 'row' }, addRowButton, create),
    ),
  );
}

export async function renderAdminData(app: App, container: HTMLElement): Promise<void> {
  container.append(el('h1', {}, 'DATA ADMINISTRATION'));

  const status = el('div', { class: 'status', id: 'export-status' });
  const grid = el('div', { class: 'export-grid', id: 'export-grid' });
  for (const dataset of DATASETS) {
    const row = el('div', { class: 'row export-row' }, el('span', { class: 'dataset' }, dataset));
    for (const format of EXPORT_FORMATS) {
      const button = el('button', {
        type: 'button',
        'data-export': `${dataset}-${format}`,
      }, format.toUpperCase());
      button.addEventListener('click', () => {
        void (async () => {
          clear(status);
          try {
            const download = await app.api.exportDataset(dataset, format);
            saveFile(download.bytes, download.filename, download.mime);
            status.append(banner('ok', `saved ${download.filename} (${download.bytes.length} bytes)`));
          } catch (error) {
            toast(error instanceof ApiError ? error.message : 'export failed', 'error');
          }
        })();
      });
      row.append(button);
    }
    grid.append(row);
  }
  container.append(
    el('section', { class: 'card' }, el('h2', {}, 'Exports'), grid, status),
  );

  const startDate = el('input', { type: 'date', id: 'system-start-date' });
  const startButton = el('button', { type: 'button', id: 'system-start-set' }, 'Set system start');
  startButton.addEventListener('click', () => {
    void (async () => {
      try {
        const receipt = await app.api.setSystemStart(startDate.value);
        toast(`system start set to ${receipt.start_date}`);
      } catch (error) {
        toast(error instanceof ApiError ? error.message : 'could not set system start', 'error');
      }
    })();
  });
  container.append(
    el('section', { class: 'card' },
      el('h2', {}, 'System start'),
      el('div', { class: 'row' }, labeled('First bookable day', startDate), startButton),
    ),
  );

  const { entries } = await app.api.audit();
  container.append(el('h2', {}, 'Audit log'));
  container.append(table(
    ['When', 'Actor', 'Action', 'Subject', 'Tx'],
    entries.slice(-100).reverse().map(entry => [
      fmtTimestamp(entry.timestamp_ms),
      shortAddress(entry.actor),
      entry.action,
      entry.subject,
      el('code', {}, entry.tx_id.slice(0, 12)),
    ]),
  ));
}
