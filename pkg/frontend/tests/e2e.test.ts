// @vitest-environment jsdom
/** End-to-end against a live local service: launches the real Python
 * backend (building a tiny trained fixture on first run), drives the studio
 * headlessly, and checks the streamed-snapshot and gallery contracts. */
import { spawn, type ChildProcess } from 'node:child_process';
import { mkdtempSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { createStudio, type Studio } from '../src/main.js';

const PORT = 8451;
const BASE = `http://127.0.0.1:${PORT}`;
let server: ChildProcess | null = null;

async function waitReady(timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const res = await fetch(`${BASE}/health`);
      if (res.ok) {
        const body = (await res.json()) as { ready: boolean };
        if (body.ready) return;
      }
    } catch {
      /* not up yet */
    }
    if (Date.now() > deadline) throw new Error('service did not become ready');
    await new Promise((r) => setTimeout(r, 500));
  }
}

async function waitFor(pred: () => boolean, timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!pred()) {
    if (Date.now() > deadline) throw new Error('condition not reached');
    await new Promise((r) => setTimeout(r, 50));
  }
}

beforeAll(async () => {
  const fixtureDir = process.env['VPRE_E2E_DIR'] ?? mkdtempSync(join(tmpdir(), 'vpre-e2e-'));
  server = spawn(
    'python3',
    [join(__dirname, 'serve_fixture.py'), '--port', String(PORT), '--dir', fixtureDir],
    { stdio: ['ignore', 'inherit', 'inherit'] },
  );
  await waitReady(280_000);
}, 300_000);

afterAll(() => {
  server?.kill('SIGTERM');
});

function setup(): { studio: Studio; root: HTMLElement } {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById('app')!;
  const studio = createStudio(root, new ApiClient(BASE));
  return { studio, root };
}

describe('studio end to end', () => {
  it('launches a design job, streams snapshots, and shows manifest scores', async () => {
    const { studio, root } = setup();
    await waitFor(() => studio.state.users.length > 0, 30_000);
    await studio.selectUser(studio.state.users[0]!.user_id);
    await waitFor(() => studio.state.recommendations.length > 0, 30_000);

    studio.dispatch({ type: 'select-category', categoryId: 0 });
    studio.dispatch({ type: 'set-controls', m: 4, k: 2, iterations: 6, eta: 1 });
    await studio.submitDesign();

    expect(studio.state.jobState).toBe('done');
    // at least one streamed snapshot was rendered
    expect(studio.state.snapshots.length).toBeGreaterThanOrEqual(1);
    expect(root.querySelectorAll('.snapshot').length).toBeGreaterThanOrEqual(1);
    const steps = studio.state.snapshots.map((s) => s.step);
    expect([...steps].sort((a, b) => a - b)).toEqual(steps);

    // gallery scores equal the job manifest values exactly
    const api = new ApiClient(BASE);
    const record = await api.job(studio.state.activeJobId!);
    const manifest = record.result!.candidates!;
    expect(studio.state.gallery.map((g) => g.preference)).toEqual(
      manifest.map((c) => c.preference),
    );
    const shown = [...root.querySelectorAll('#section-gallery .score')].map(
      (e) => e.textContent,
    );
    expect(shown).toEqual(manifest.map((c) => c.preference.toFixed(4)));
    // streamed sequence matches the record's snapshot log
    expect(studio.state.snapshots.map((s) => s.image_ref)).toEqual(
      record.snapshots.map((s) => s.image_ref),
    );
  }, 120_000);

  it('blocks k > m client-side without calling the service', async () => {
    const { studio, root } = setup();
    await waitFor(() => studio.state.users.length > 0, 30_000);
    await studio.selectUser(studio.state.users[1]!.user_id);
    studio.dispatch({ type: 'select-category', categoryId: 1 });
    studio.dispatch({ type: 'set-controls', m: 2, k: 5 });

    const realFetch = globalThis.fetch;
    let designCalls = 0;
    globalThis.fetch = ((input: RequestInfo | URL, init?: RequestInit) => {
      if (String(input).includes('/design')) designCalls += 1;
      return realFetch(input as never, init);
    }) as typeof fetch;
    try {
      await studio.submitDesign();
    } finally {
      globalThis.fetch = realFetch;
    }
    expect(designCalls).toBe(0);
    expect(studio.state.error).toMatch(/k \(5\) must not exceed m \(2\)/);
    expect(root.querySelector('.error')?.textContent).toContain('must not exceed');
    expect(studio.state.jobState).toBeNull();
  }, 60_000);

  it('tailors from a catalog item and renders the timeline', async () => {
    const { studio, root } = setup();
    await waitFor(() => studio.state.users.length > 0, 30_000);
    await studio.selectUser(studio.state.users[2]!.user_id);
    studio.dispatch({ type: 'select-category', categoryId: 0 });
    studio.dispatch({ type: 'set-controls', iterations: 4, m: 2, k: 1 });

    const api = new ApiClient(BASE);
    const items = await api.items(0);
    const item = items.items[0]!;
    studio.dispatch({
      type: 'select-prototype',
      prototype: { kind: 'item', itemId: item.item_id, imageUrl: item.image_url },
    });
    await studio.submitTailor();

    expect(studio.state.jobState).toBe('done');
    expect(studio.state.tailorTimeline.length).toBeGreaterThanOrEqual(2);
    const frames = [...root.querySelectorAll('.checkpoint')].map((e) =>
      e.getAttribute('data-step'),
    );
    expect(frames[0]).toBe('0');
    expect(studio.state.inversionError).not.toBeNull();
  }, 120_000);
});
