// Criterion: every dataset × format export button produces a download whose
// bytes the backend's own parser accepts and attributes to the right
// dataset. The bytes come from the captured download, not from re-fetching.

import { execFileSync } from 'node:child_process';
import { afterAll, beforeAll, describe, expect, it, vi } from 'vitest';
import { DATASETS, EXPORT_FORMATS } from '../src/api';
import { downloadLog } from '../src/download';
import { bootApp, PHRASES, signInAs, waitFor } from './helpers';

// jsdom cannot follow the blob: URL a real browser would download, so the
// anchor's default action is disabled; the captured bytes are what we test.
let anchorClick: ReturnType<typeof vi.spyOn>;
beforeAll(() => {
  anchorClick = vi.spyOn(HTMLAnchorElement.prototype, 'click').mockImplementation(() => {});
});
afterAll(() => anchorClick.mockRestore());

const PYTHON = process.env.PYTHON || 'python3';

const PARSE_SCRIPT = [
  'import sys, json',
  'from medledger.exporter import parse',
  'dataset = parse(sys.stdin.buffer.read(), sys.argv[1])',
  'print(json.dumps({"kind": dataset.kind, "rows": len(dataset.rows)}))',
].join('\n');

function referenceParse(bytes: Uint8Array, format: string): { kind: string; rows: number } {
  const out = execFileSync(PYTHON, ['-c', PARSE_SCRIPT, format], {
    input: Buffer.from(bytes),
  });
  return JSON.parse(String(out));
}

describe('admin data exports', () => {
  it('every dataset/format button downloads bytes the reference parser accepts', async () => {
    const app = await bootApp();
    await signInAs(app, PHRASES.admin);
    await app.navigate('#/admin/data');

    downloadLog.length = 0;
    for (const dataset of DATASETS) {
      for (const format of EXPORT_FORMATS) {
        const before = downloadLog.length;
        const button = document.querySelector<HTMLButtonElement>(
          `[data-export="${dataset}-${format}"]`);
        expect(button, `button for ${dataset} ${format}`).not.toBeNull();
        button!.click();
        const captured = await waitFor(
          () => (downloadLog.length > before ? downloadLog[downloadLog.length - 1] : null),
          `download of ${dataset}.${format}`,
        );

        expect(captured.filename).toContain(dataset);
        expect(captured.filename.endsWith(`.${format}`)).toBe(true);
        const verdict = referenceParse(captured.bytes, format);
        expect(verdict.kind, `${dataset}.${format} parses to its own kind`).toBe(dataset);
        expect(verdict.rows, `${dataset}.${format} has seeded rows`).toBeGreaterThan(0);
      }
    }
    expect(downloadLog.length).toBe(DATASETS.length * EXPORT_FORMATS.length);
  });
});
