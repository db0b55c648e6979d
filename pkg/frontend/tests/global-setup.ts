// Boots a real node for the test run: seed the demo world into a throwaway
// data dir, start the gateway on a free port, and hand the URL to the tests.

import { execFileSync, spawn, ChildProcess } from 'node:child_process';
import { mkdtempSync, rmSync, writeFileSync } from 'node:fs';
import { createServer } from 'node:net';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import type { TestProject } from 'vitest/node';

declare module 'vitest' {
  interface ProvidedContext {
    gatewayUrl: string;
  }
}

const PYTHON = process.env.PYTHON || 'python3';

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = createServer();
    server.on('error', reject);
    server.listen(0, '127.0.0.1', () => {
      const { port } = server.address() as { port: number };
      server.close(() => resolve(port));
    });
  });
}

async function waitForGateway(url: string, child: ChildProcess, logs: string[]): Promise<void> {
  const deadline = Date.now() + 60_000;
  while (Date.now() < deadline) {
    if (child.exitCode !== null) {
      throw new Error(`gateway exited early (${child.exitCode}):\n${logs.join('')}`);
    }
    try {
      // Any HTTP answer (even 401) proves the server is up.
      await fetch(`${url}/medications`);
      return;
    } catch {
      await new Promise(resolve => setTimeout(resolve, 200));
    }
  }
  throw new Error(`gateway did not come up at ${url}:\n${logs.join('')}`);
}

export default async function setup(project: TestProject): Promise<() => Promise<void>> {
  const workdir = mkdtempSync(join(tmpdir(), 'medledger-webui-'));
  const port = await freePort();
  const configPath = join(workdir, 'node.yaml');
  writeFileSync(configPath, [
    `data_dir: ${join(workdir, 'data')}`,
    `listen: 127.0.0.1:${port}`,
    '',
  ].join('\n'));

  execFileSync(PYTHON, ['-m', 'medledger.cli', 'seed-demo', '--config', configPath], {
    stdio: 'pipe',
  });

  const child = spawn(PYTHON, ['-m', 'medledger.cli', 'node', 'run', '--config', configPath], {
    stdio: ['ignore', 'pipe', 'pipe'],
  });
  const logs: string[] = [];
  child.stdout!.on('data', chunk => logs.push(String(chunk)));
  child.stderr!.on('data', chunk => logs.push(String(chunk)));

  const url = `http://127.0.0.1:${port}`;
  try {
    await waitForGateway(url, child, logs);
  } catch (error) {
    child.kill('SIGKILL');
    rmSync(workdir, { recursive: true, force: true });
    throw error;
  }

  project.provide('gatewayUrl', url);

  return async () => {
    child.kill('SIGTERM');
    await new Promise<void>(resolve => {
      const force = setTimeout(() => {
        child.kill('SIGKILL');
        resolve();
      }, 5000);
      child.on('exit', () => {
        clearTimeout(force);
        resolve();
      });
    });
    rmSync(workdir, { recursive: true, force: true });
  };
}
