/** Studio bootstrap: wires API, state, and views together. The server is
 * the single source of truth; the client holds no derived numbers. */

import { ApiClient, type ItemRow } from './api.js';
import {
  encodeSelection,
  etaFromSlider,
  initialState,
  parseSelection,
  reduce,
  validateQuery,
  type Action,
  type StudioState,
} from './state.js';
import {
  renderComparison,
  renderDesignControls,
  renderGallery,
  renderJobProgress,
  renderRecommendPanel,
  renderTailorTimeline,
  renderUserBrowser,
} from './views.js';

export type Studio = {
  state: StudioState;
  dispatch: (action: Action) => void;
  submitDesign: () => Promise<void>;
  submitTailor: () => Promise<void>;
  selectUser: (userId: string) => Promise<void>;
};

export function createStudio(root: HTMLElement, api: ApiClient): Studio {
  let state = initialState;
  let history: ItemRow[] | null = null;
  let datasetTopK: { item_id: string; score: number; image_url: string }[] = [];

  const sections: Record<string, HTMLElement> = {};
  for (const id of ['users', 'recommend', 'design', 'progress', 'gallery',
                    'compare', 'tailor']) {
    const node = document.createElement('section');
    node.id = `section-${id}`;
    root.append(node);
    sections[id] = node;
  }

  function render(): void {
    renderUserBrowser(sections['users']!, state, history);
    renderRecommendPanel(sections['recommend']!, state);
    renderDesignControls(sections['design']!, state);
    renderJobProgress(sections['progress']!, state);
    renderGallery(sections['gallery']!, state);
    renderComparison(sections['compare']!, state, datasetTopK);
    renderTailorTimeline(sections['tailor']!, state);
    wire();
  }

  function dispatch(action: Action): void {
    state = reduce(state, action);
    if (action.type === 'select-user' || action.type === 'select-category') {
      try {
        window.history.replaceState(null, '', encodeSelection(state) || '#');
      } catch {
        /* non-browser host */
      }
    }
    render();
  }

  async function selectUser(userId: string): Promise<void> {
    dispatch({ type: 'select-user', userId });
    try {
      const [rec, hist] = await Promise.all([
        api.recommend(userId, 6),
        fetchHistory(userId),
      ]);
      history = hist;
      dispatch({ type: 'recommendations-loaded', rows: rec.items });
    } catch (err) {
      dispatch({ type: 'error', message: String(err) });
    }
  }

  async function fetchHistory(userId: string): Promise<ItemRow[]> {
    const res = await fetch(`${api.baseUrl}/users/${encodeURIComponent(userId)}/history`);
    if (!res.ok) return [];
    const body = (await res.json()) as { items: ItemRow[] };
    return body.items;
  }

  async function refreshComparison(): Promise<void> {
    if (!state.selectedUser || state.selectedCategory === null) return;
    const rec = await api.recommend(state.selectedUser, state.k);
    const url = `${api.baseUrl}/recommend?user=${encodeURIComponent(state.selectedUser)}` +
      `&k=${state.k}&category=${state.selectedCategory}`;
    const res = await fetch(url);
    if (res.ok) {
      const body = (await res.json()) as { items: typeof datasetTopK };
      datasetTopK = body.items;
    } else {
      datasetTopK = rec.items;
    }
  }

  async function followJob(jobId: string, kind: 'design' | 'tailor'): Promise<void> {
    dispatch({ type: 'job-started', jobId, kind });
    const terminal = await api.streamJob(jobId, (ev) => {
      if (ev.type === 'snapshot') dispatch({ type: 'snapshot', snapshot: ev });
    });
    const record = await api.job(jobId);
    dispatch({
      type: 'job-finished',
      state: terminal,
      record: {
        candidates: record.result?.candidates,
        checkpoints: record.result?.checkpoints,
        inversion_error: record.result?.inversion_error,
        error: record.error,
      },
    });
    if (kind === 'design' && terminal === 'done') {
      await refreshComparison();
      render();
    }
  }

  async function submitDesign(): Promise<void> {
    const problem = validateQuery(state);
    if (problem) {
      dispatch({ type: 'error', message: problem });
      return;
    }
    try {
      const { job_id } = await api.design({
        user: state.selectedUser!,
        category: state.selectedCategory!,
        eta: state.eta,
        m: state.m,
        k: state.k,
        mode: state.mode,
        iterations: state.iterations,
      });
      await followJob(job_id, 'design');
    } catch (err) {
      dispatch({ type: 'error', message: String(err) });
    }
  }

  async function submitTailor(): Promise<void> {
    const problem = validateQuery(state);
    if (problem || !state.prototype) {
      dispatch({ type: 'error', message: problem ?? 'pick a prototype first' });
      return;
    }
    try {
      const base = {
        user: state.selectedUser!,
        category: state.selectedCategory!,
        iterations: state.iterations,
        eta: state.eta,
      };
      let body;
      if (state.prototype.kind === 'item') {
        body = { ...base, item_id: state.prototype.itemId };
      } else {
        const png = await fetch(`${api.baseUrl}/images/${state.prototype.imageRef}`);
        const bytes = new Uint8Array(await png.arrayBuffer());
        let binary = '';
        for (const b of bytes) binary += String.fromCharCode(b);
        body = { ...base, image_b64: btoa(binary) };
      }
      const { job_id } = await api.tailor(body);
      await followJob(job_id, 'tailor');
    } catch (err) {
      dispatch({ type: 'error', message: String(err) });
    }
  }

  function wire(): void {
    for (const btn of root.querySelectorAll<HTMLButtonElement>('.user-pick')) {
      btn.onclick = () => void selectUser(btn.dataset['user']!);
    }
    const cat = root.querySelector<HTMLSelectElement>('#category-select');
    if (cat) {
      cat.onchange = () => {
        if (cat.value !== '') {
          dispatch({ type: 'select-category', categoryId: Number(cat.value) });
        }
      };
    }
    const eta = root.querySelector<HTMLInputElement>('#eta-slider');
    if (eta) {
      eta.onchange = () =>
        dispatch({ type: 'set-controls', eta: etaFromSlider(Number(eta.value)) });
    }
    const m = root.querySelector<HTMLInputElement>('#m-input');
    if (m) m.onchange = () => dispatch({ type: 'set-controls', m: Number(m.value) });
    const k = root.querySelector<HTMLInputElement>('#k-input');
    if (k) k.onchange = () => dispatch({ type: 'set-controls', k: Number(k.value) });
    const mode = root.querySelector<HTMLSelectElement>('#mode-select');
    if (mode) {
      mode.onchange = () =>
        dispatch({ type: 'set-controls', mode: mode.value as 'rank' | 'sample' });
    }
    const submit = root.querySelector<HTMLButtonElement>('#design-submit');
    if (submit) submit.onclick = () => void submitDesign();
    const tailorBtn = root.querySelector<HTMLButtonElement>('#tailor-submit');
    if (tailorBtn) tailorBtn.onclick = () => void submitTailor();
    for (const pick of root.querySelectorAll<HTMLButtonElement>('.pick-prototype')) {
      pick.onclick = () => {
        const entry = state.gallery.find((g) => g.imageRef === pick.dataset['ref']);
        if (entry) {
          dispatch({
            type: 'select-prototype',
            prototype: { kind: 'candidate', imageRef: entry.imageRef, latent: entry.latent },
          });
        }
      };
    }
  }

  async function boot(): Promise<void> {
    try {
      const [users, cats] = await Promise.all([api.users(0, 50), api.categories()]);
      dispatch({ type: 'catalog-loaded', users: users.users, categories: cats.categories });
      const wanted = parseSelection(window.location?.hash ?? '');
      if (wanted.category !== null) {
        dispatch({ type: 'select-category', categoryId: wanted.category });
      }
      if (wanted.user && users.users.some((u) => u.user_id === wanted.user)) {
        await selectUser(wanted.user);
      }
    } catch (err) {
      dispatch({ type: 'error', message: `service unreachable: ${String(err)}` });
    }
  }
  void boot();
  render();

  return {
    get state() {
      return state;
    },
    dispatch,
    submitDesign,
    submitTailor,
    selectUser,
  };
}

declare global {
  interface Window {
    studio?: Studio;
  }
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  const api = new ApiClient('');
  window.studio = createStudio(document.getElementById('app')!, api);
}
