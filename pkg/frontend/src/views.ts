/** DOM rendering. Every view is a pure function of (state, api base url):
 * rendering the same state twice produces identical markup. Numbers shown
 * are taken verbatim from API payloads. */

import type { ApiClient, ItemRow } from './api.js';
import { traceChartSvg } from './chart.js';
import { sliderFromEta, type StudioState } from './state.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  for (const child of children) node.append(child);
  return node;
}

function scoreBadge(value: number, label = 'preference'): HTMLElement {
  return el('span', { class: 'score', title: label }, [value.toFixed(4)]);
}

export function renderUserBrowser(
  container: HTMLElement,
  state: StudioState,
  history: ItemRow[] | null,
): void {
  container.replaceChildren();
  const list = el('ul', { class: 'user-list' });
  for (const u of state.users) {
    const selected = u.user_id === state.selectedUser ? ' selected' : '';
    const item = el('li', { class: `user-row${selected}`, 'data-user': u.user_id }, [
      el('button', { class: 'user-pick', 'data-user': u.user_id }, [
        `${u.user_id} (${u.n_interactions})`,
      ]),
    ]);
    list.append(item);
  }
  container.append(el('h2', {}, ['Users']), list);
  if (state.selectedUser && history) {
    const strip = el('div', { class: 'history-strip' });
    for (const it of history) {
      strip.append(
        el('figure', { class: 'thumb' }, [
          el('img', { src: it.image_url, alt: it.item_id, width: '48', height: '48' }),
          el('figcaption', {}, [`${it.item_id} · ${it.category}`]),
        ]),
      );
    }
    container.append(el('h3', {}, [`History of ${state.selectedUser}`]), strip);
  }
}

export function renderRecommendPanel(container: HTMLElement, state: StudioState): void {
  container.replaceChildren(el('h2', {}, ['Recommendations']));
  if (!state.recommendations.length) {
    container.append(el('p', { class: 'hint' }, ['Pick a user to rank the catalog.']));
    return;
  }
  const row = el('div', { class: 'card-row' });
  for (const rec of state.recommendations) {
    row.append(
      el('figure', { class: 'card' }, [
        el('img', { src: rec.image_url, alt: rec.item_id, width: '64', height: '64' }),
        el('figcaption', {}, [
          el('span', { class: 'item-id' }, [rec.item_id]),
          scoreBadge(rec.score),
        ]),
      ]),
    );
  }
  container.append(row);
}

export function renderDesignControls(container: HTMLElement, state: StudioState): void {
  container.replaceChildren(el('h2', {}, ['Design']));
  const cats = el('select', { id: 'category-select' });
  cats.append(el('option', { value: '' }, ['category…']));
  for (const c of state.categories) {
    const opt = el('option', { value: String(c.category_id) }, [
      `${c.name} (${c.n_items})`,
    ]);
    if (c.category_id === state.selectedCategory) opt.selected = true;
    cats.append(opt);
  }
  const etaSlider = el('input', {
    id: 'eta-slider',
    type: 'range',
    min: '0',
    max: '1',
    step: '0.01',
    value: String(sliderFromEta(state.eta)),
  });
  const form = el('div', { class: 'controls' }, [
    el('label', {}, ['Category ', cats]),
    el('label', {}, [`Quality weight η = ${state.eta} `, etaSlider]),
    el('label', {}, [
      'starts m ',
      el('input', { id: 'm-input', type: 'number', min: '1', value: String(state.m) }),
    ]),
    el('label', {}, [
      'return k ',
      el('input', { id: 'k-input', type: 'number', min: '1', value: String(state.k) }),
    ]),
    el('label', {}, [
      'mode ',
      (() => {
        const sel = el('select', { id: 'mode-select' });
        for (const mode of ['rank', 'sample'] as const) {
          const opt = el('option', { value: mode }, [mode]);
          if (mode === state.mode) opt.selected = true;
          sel.append(opt);
        }
        return sel;
      })(),
    ]),
    el('button', { id: 'design-submit' }, ['Generate']),
  ]);
  container.append(form);
  if (state.error) {
    container.append(el('p', { class: 'error', role: 'alert' }, [state.error]));
  }
  if (state.jobState) {
    container.append(
      el('p', { class: 'job-state' }, [
        `job ${state.activeJobId ?? ''}: ${state.jobState}`,
      ]),
    );
  }
}

export function renderJobProgress(container: HTMLElement, state: StudioState): void {
  container.replaceChildren(el('h2', {}, ['Progress']));
  if (!state.snapshots.length) {
    container.append(el('p', { class: 'hint' }, ['No snapshots yet.']));
    return;
  }
  const chart = el('div', { class: 'trace-chart' });
  chart.innerHTML = traceChartSvg([
    { label: 'best objective', values: state.snapshots.map((s) => s.objective) },
  ]);
  const strip = el('div', { class: 'snapshot-strip' });
  for (const snap of state.snapshots) {
    strip.append(
      el('figure', { class: 'thumb snapshot', 'data-step': String(snap.step) }, [
        el('img', {
          src: `/images/${snap.image_ref}`,
          alt: `step ${snap.step}`,
          width: '48',
          height: '48',
        }),
        el('figcaption', {}, [`b${snap.step} · ${snap.objective.toFixed(3)}`]),
      ]),
    );
  }
  container.append(chart, strip);
}

/** Fig-4 layout: dataset top-k on the left, generated top-k on the right,
 * preference scores under every image. */
export function renderComparison(
  container: HTMLElement,
  state: StudioState,
  datasetTopK: { item_id: string; score: number; image_url: string }[],
): void {
  container.replaceChildren(el('h2', {}, ['Dataset vs. generated']));
  const grid = el('div', { class: 'compare-grid' });
  const left = el('div', { class: 'compare-col dataset' }, [el('h3', {}, ['Dataset top-k'])]);
  for (const row of datasetTopK) {
    left.append(
      el('figure', { class: 'card' }, [
        el('img', { src: row.image_url, alt: row.item_id, width: '64', height: '64' }),
        el('figcaption', {}, [el('span', {}, [row.item_id]), scoreBadge(row.score)]),
      ]),
    );
  }
  const right = el('div', { class: 'compare-col generated' }, [
    el('h3', {}, ['Generated top-k']),
  ]);
  for (const entry of state.gallery) {
    const fig = el('figure', { class: 'card candidate', 'data-ref': entry.imageRef }, [
      el('img', {
        src: `/images/${entry.imageRef}`,
        alt: entry.imageRef,
        width: '64',
        height: '64',
      }),
      el('figcaption', {}, [scoreBadge(entry.preference)]),
      el('button', { class: 'pick-prototype', 'data-ref': entry.imageRef }, [
        'tailor this',
      ]),
    ]);
    right.append(fig);
  }
  grid.append(left, right);
  container.append(grid);
}

/** Fig-5 layout: prototype, its latent approximation, then checkpoints
 * b0…bN with the preference score under each frame. */
export function renderTailorTimeline(container: HTMLElement, state: StudioState): void {
  container.replaceChildren(el('h2', {}, ['Tailoring']));
  if (state.prototype) {
    const src =
      state.prototype.kind === 'item'
        ? state.prototype.imageUrl
        : `/images/${state.prototype.imageRef}`;
    container.append(
      el('div', { class: 'prototype' }, [
        el('h3', {}, ['Prototype']),
        el('img', { src, alt: 'prototype', width: '64', height: '64' }),
        el('button', { id: 'tailor-submit' }, ['Tailor to selected user']),
      ]),
    );
  } else {
    container.append(el('p', { class: 'hint' }, ['Pick a prototype from the gallery or catalog.']));
  }
  if (state.inversionError !== null) {
    container.append(
      el('p', { class: 'inversion' }, [
        `latent approximation error: ${state.inversionError.toFixed(4)}`,
      ]),
    );
  }
  if (state.tailorTimeline.length) {
    const strip = el('div', { class: 'timeline-strip' });
    for (const cp of state.tailorTimeline) {
      strip.append(
        el('figure', { class: 'thumb checkpoint', 'data-step': String(cp.step) }, [
          el('img', {
            src: `/images/${cp.image_ref}`,
            alt: `b${cp.step}`,
            width: '48',
            height: '48',
          }),
          el('figcaption', {}, [`b${cp.step}`, scoreBadge(cp.preference)]),
        ]),
      );
    }
    container.append(strip);
  }
}

export function renderGallery(container: HTMLElement, state: StudioState): void {
  container.replaceChildren(el('h2', {}, ['Candidates']));
  if (!state.gallery.length) {
    container.append(el('p', { class: 'hint' }, ['Run a design job to fill the gallery.']));
    return;
  }
  const row = el('div', { class: 'card-row gallery' });
  for (const entry of state.gallery) {
    row.append(
      el('figure', { class: 'card candidate', 'data-ref': entry.imageRef }, [
        el('img', {
          src: `/images/${entry.imageRef}`,
          alt: entry.imageRef,
          width: '64',
          height: '64',
        }),
        el('figcaption', {}, [scoreBadge(entry.preference)]),
      ]),
    );
  }
  container.append(row);
}
