import { describe, expect, it } from 'vitest';

import type { Snapshot } from '../src/api.js';
import {
  encodeSelection,
  etaFromSlider,
  initialState,
  insertSnapshot,
  parseSelection,
  reduce,
  sliderFromEta,
  validateQuery,
  type StudioState,
} from '../src/state.js';

function snap(step: number, objective = 0): Snapshot {
  return { type: 'snapshot', index: step, step, objective, image_ref: `ref${step}` };
}

function ready(overrides: Partial<StudioState> = {}): StudioState {
  return {
    ...initialState,
    selectedUser: 'u0001',
    selectedCategory: 2,
    ...overrides,
  };
}

describe('validateQuery', () => {
  it('accepts a well-formed query', () => {
    expect(validateQuery(ready())).toBeNull();
  });

  it('blocks k greater than m', () => {
    const msg = validateQuery(ready({ k: 5, m: 2 }));
    expect(msg).toMatch(/k \(5\) must not exceed m \(2\)/);
  });

  it('blocks negative eta', () => {
    expect(validateQuery(ready({ eta: -0.1 }))).toMatch(/eta/);
  });

  it('requires user and category', () => {
    expect(validateQuery({ ...initialState })).toMatch(/user/);
    expect(validateQuery(ready({ selectedCategory: null }))).toMatch(/category/);
  });
});

describe('snapshot ordering', () => {
  it('keeps steps strictly increasing even for bursty delivery', () => {
    let snaps: Snapshot[] = [];
    for (const s of [snap(5), snap(10), snap(10), snap(7), snap(15)]) {
      snaps = insertSnapshot(snaps, s);
    }
    expect(snaps.map((s) => s.step)).toEqual([5, 10, 15]);
  });

  it('reducer applies the same rule', () => {
    let state = ready();
    for (const s of [snap(2), snap(1), snap(4)]) {
      state = reduce(state, { type: 'snapshot', snapshot: s });
    }
    expect(state.snapshots.map((s) => s.step)).toEqual([2, 4]);
  });
});

describe('job lifecycle', () => {
  it('job-started clears previous progress', () => {
    let state = ready({ snapshots: [snap(3)], error: 'old' });
    state = reduce(state, { type: 'job-started', jobId: 'j1', kind: 'design' });
    expect(state.snapshots).toEqual([]);
    expect(state.error).toBeNull();
    expect(state.jobState).toBe('running');
  });

  it('design completion fills the gallery with payload scores', () => {
    let state = ready();
    state = reduce(state, { type: 'job-started', jobId: 'j1', kind: 'design' });
    state = reduce(state, {
      type: 'job-finished',
      state: 'done',
      record: {
        candidates: [
          { image_ref: 'abc', objective: 1.5, preference: 2.0, quality_penalty: 0.5,
            latent: [0, 0], trace: [0.1, 1.5], start_index: 0 },
        ],
      },
    });
    expect(state.gallery).toHaveLength(1);
    expect(state.gallery[0]!.preference).toBe(2.0);
    expect(state.gallery[0]!.objective).toBe(1.5);
  });

  it('failure surfaces the error', () => {
    let state = ready();
    state = reduce(state, { type: 'job-started', jobId: 'j1', kind: 'design' });
    state = reduce(state, {
      type: 'job-finished',
      state: 'failed',
      record: { error: 'boom' },
    });
    expect(state.error).toBe('boom');
  });

  it('rendering inputs are pure data (same action sequence, same state)', () => {
    const actions = [
      { type: 'job-started', jobId: 'j', kind: 'design' },
      { type: 'snapshot', snapshot: snap(1, 0.5) },
      { type: 'snapshot', snapshot: snap(2, 0.9) },
    ] as const;
    const run = () => actions.reduce((s, a) => reduce(s, a as never), ready());
    expect(run()).toEqual(run());
  });
});

describe('URL-encoded selection', () => {
  it('roundtrips user and category through the fragment', () => {
    const hash = encodeSelection(ready({ selectedUser: 'u 1/x', selectedCategory: 3 }));
    expect(parseSelection(hash)).toEqual({ user: 'u 1/x', category: 3 });
  });

  it('empty selection encodes to nothing', () => {
    expect(encodeSelection({ ...initialState })).toBe('');
    expect(parseSelection('')).toEqual({ user: null, category: null });
  });

  it('ignores malformed fragments', () => {
    expect(parseSelection('#c=notanumber&u=')).toEqual({ user: null, category: null });
  });
});

describe('eta slider mapping', () => {
  it('position zero is exactly eta zero', () => {
    expect(etaFromSlider(0)).toBe(0);
  });

  it('covers the sweep range up to 10', () => {
    expect(etaFromSlider(1)).toBe(10);
    expect(etaFromSlider(0.5)).toBeCloseTo(1, 5);
  });

  it('roundtrips within slider resolution', () => {
    for (const eta of [0, 0.5, 1, 5, 10]) {
      const back = etaFromSlider(sliderFromEta(eta));
      expect(Math.abs(back - eta)).toBeLessThanOrEqual(0.05 * Math.max(eta, 0.1));
    }
  });
});
