import { defineConfig } from 'vitest/config';

// In dev the SPA is served by vite while a node runs separately, so every
// gateway path is proxied through. Production builds are static files served
// next to (or behind the same reverse proxy as) the gateway.
const GATEWAY = process.env.GATEWAY_URL || 'http://127.0.0.1:8440';
const GATEWAY_PATHS = [
  '/auth', '/users', '/profile', '/admin', '/appointments', '/availability',
  '/doctor', '/patient', '/prescriptions', '/medications', '/labdefs',
  '/labresults', '/iot', '/access', '/tx',
];

export default defineConfig({
  server: {
    proxy: Object.fromEntries(GATEWAY_PATHS.map(path => [path, GATEWAY])),
  },
  build: {
    target: 'es2022',
  },
  test: {
    environment: 'jsdom',
    globalSetup: './tests/global-setup.ts',
    fileParallelism: false,
    testTimeout: 120_000,
    hookTimeout: 180_000,
  },
});
