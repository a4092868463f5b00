import { afterEach, describe, expect, it, vi } from 'vitest';

import { ApiClient, type StreamEvent } from '../src/api.js';

function bodyOf(lines: string[], failAfter?: number): ReadableStream<Uint8Array> {
  const encoder = new TextEncoder();
  let i = 0;
  return new ReadableStream({
    pull(controller) {
      if (failAfter !== undefined && i === failAfter) {
        controller.error(new Error('connection reset'));
        return;
      }
      if (i < lines.length) {
        controller.enqueue(encoder.encode(lines[i] + '\n'));
        i += 1;
      } else {
        controller.close();
      }
    },
  });
}

const snap = (index: number) =>
  JSON.stringify({ type: 'snapshot', index, step: index * 5, objective: index, image_ref: 'r' });
const end = JSON.stringify({ type: 'end', state: 'done' });

afterEach(() => {
  vi.unstubAllGlobals();
});

describe('streamJob resubscription', () => {
  it('resumes from the next unseen index after a mid-stream disconnect', async () => {
    const requests: string[] = [];
    vi.stubGlobal('fetch', (input: RequestInfo | URL) => {
      const url = String(input);
      requests.push(url);
      const from = Number(new URL(url, 'http://x').searchParams.get('from_index'));
      if (requests.length === 1) {
        // first attempt delivers two snapshots, then the connection drops
        return Promise.resolve(new Response(bodyOf([snap(0), snap(1)], 2)));
      }
      const lines = [snap(from), snap(from + 1), end].filter((l) => {
        const parsed = JSON.parse(l);
        return parsed.type === 'end' || parsed.index >= from;
      });
      return Promise.resolve(new Response(bodyOf(lines)));
    });

    const events: StreamEvent[] = [];
    const state = await new ApiClient('http://svc').streamJob('job1', (ev) => events.push(ev));
    expect(state).toBe('done');
    expect(requests.length).toBe(2);
    expect(requests[0]).toContain('from_index=0');
    expect(requests[1]).toContain('from_index=2'); // picks up after the last seen snapshot
    const indices = events.filter((e) => e.type === 'snapshot')
      .map((e) => (e.type === 'snapshot' ? e.index : -1));
    expect(indices).toEqual([0, 1, 2, 3]);
  });

  it('gives up after exhausting retries', async () => {
    vi.stubGlobal('fetch', () => Promise.resolve(new Response(bodyOf([snap(0)], 1))));
    await expect(
      new ApiClient('http://svc').streamJob('job1', () => undefined, 2),
    ).rejects.toThrow();
  });

  it('does not retry on a 404', async () => {
    let calls = 0;
    vi.stubGlobal('fetch', () => {
      calls += 1;
      return Promise.resolve(new Response('{"error":"unknown job"}', { status: 404 }));
    });
    await expect(
      new ApiClient('http://svc').streamJob('nope', () => undefined),
    ).rejects.toMatchObject({ status: 404 });
    expect(calls).toBe(1);
  });
});
