// @vitest-environment jsdom
import { describe, expect, it } from 'vitest';

import { polylinePoints, traceChartSvg } from '../src/chart.js';
import { initialState, type StudioState } from '../src/state.js';
import {
  renderComparison,
  renderGallery,
  renderJobProgress,
  renderRecommendPanel,
} from '../src/views.js';

function container(): HTMLElement {
  const node = document.createElement('div');
  document.body.append(node);
  return node;
}

const withGallery: StudioState = {
  ...initialState,
  gallery: [
    { imageRef: 'aaa', preference: 1.2345, objective: 1.0, qualityPenalty: 0.2,
      latent: [0], trace: [0, 1] },
    { imageRef: 'bbb', preference: -0.5, objective: -0.7, qualityPenalty: 0.2,
      latent: [0], trace: [0] },
  ],
};

describe('gallery', () => {
  it('shows the preference score next to every image', () => {
    const node = container();
    renderGallery(node, withGallery);
    const scores = [...node.querySelectorAll('.card .score')].map((e) => e.textContent);
    expect(scores).toEqual(['1.2345', '-0.5000']);
  });

  it('re-rendering from the same state is idempotent', () => {
    const node = container();
    renderGallery(node, withGallery);
    const first = node.innerHTML;
    renderGallery(node, withGallery);
    expect(node.innerHTML).toBe(first);
  });
});

describe('recommendations', () => {
  it('renders scores straight from the payload', () => {
    const node = container();
    renderRecommendPanel(node, {
      ...initialState,
      recommendations: [
        { item_id: 'i1', score: 0.75, category: 'tee', image_url: '/images/x' },
      ],
    });
    expect(node.querySelector('.score')?.textContent).toBe('0.7500');
    expect(node.querySelector('img')?.getAttribute('src')).toBe('/images/x');
  });
});

describe('progress', () => {
  it('renders snapshots in step order with a trace chart', () => {
    const node = container();
    renderJobProgress(node, {
      ...initialState,
      snapshots: [
        { type: 'snapshot', index: 0, step: 5, objective: 0.1, image_ref: 'r1' },
        { type: 'snapshot', index: 1, step: 10, objective: 0.4, image_ref: 'r2' },
      ],
    });
    const steps = [...node.querySelectorAll('.snapshot')].map((e) =>
      e.getAttribute('data-step'),
    );
    expect(steps).toEqual(['5', '10']);
    expect(node.querySelector('svg')).not.toBeNull();
  });
});

describe('comparison view', () => {
  it('puts dataset and generated columns side by side with scores', () => {
    const node = container();
    renderComparison(node, withGallery, [
      { item_id: 'i9', score: 2.5, image_url: '/images/zzz' },
    ]);
    expect(node.querySelectorAll('.compare-col.dataset .card')).toHaveLength(1);
    expect(node.querySelectorAll('.compare-col.generated .card')).toHaveLength(2);
    expect(node.querySelector('.dataset .score')?.textContent).toBe('2.5000');
  });
});

describe('chart', () => {
  it('maps a monotone series to descending y coordinates', () => {
    const pts = polylinePoints([0, 1, 2], 100, 50, 0).split(' ');
    const ys = pts.map((p) => Number(p.split(',')[1]));
    expect(ys[0]).toBeGreaterThan(ys[1]!);
    expect(ys[1]).toBeGreaterThan(ys[2]!);
  });

  it('handles constant series without dividing by zero', () => {
    expect(traceChartSvg([{ label: 'flat', values: [1, 1, 1] }])).toContain('polyline');
  });
});
