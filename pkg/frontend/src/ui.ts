// Small DOM helpers so views can build trees without a template library.

type Child = Node | string | null | undefined;

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: Child[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  for (const child of children) {
    if (child === null || child === undefined) continue;
    node.append(child);
  }
  return node;
}

export function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function shortAddress(address: string): string {
  return address.length > 14 ? `${address.slice(0, 8)}…${address.slice(-4)}` : address;
}

export function fmtTimestamp(ms: number): string {
  return new Date(ms).toISOString().replace('T', ' ').slice(0, 19);
}

export function todayDate(): string {
  return new Date().toISOString().slice(0, 10);
}

export function table(headers: string[], rows: Child[][]): HTMLTableElement {
  const head = el('tr', {});
  for (const header of headers) head.append(el('th', {}, header));
  const body = el('tbody', {});
  for (const row of rows) {
    const tr = el('tr', {});
    for (const cell of row) tr.append(el('td', {}, cell));
    body.append(tr);
  }
  const node = el('table', {}, el('thead', {}, head), body);
  return node;
}

// Gateway errors surface as non-blocking toasts so a failed action never
// traps the user in a dialog.
export function toast(message: string, kind: 'info' | 'error' = 'info'): void {
  let host = document.getElementById('toasts');
  if (!host) {
    host = el('div', { id: 'toasts' });
    document.body.append(host);
  }
  const note = el('div', { class: `toast ${kind}`, role: 'status' }, message);
  host.append(note);
  setTimeout(() => note.remove(), 4000);
}

export function banner(kind: 'ok' | 'error' | 'notice', ...children: Child[]): HTMLElement {
  return el('div', { class: `banner ${kind}` }, ...children);
}

export function labeled(text: string, input: HTMLElement): HTMLElement {
  return el('label', { class: 'field' }, el('span', {}, text), input);
}
