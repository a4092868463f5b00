/** Studio state and its reducer. Pure functions: every mutation of the UI
 * flows through `reduce`, and re-rendering from equal states is idempotent.
 * Control invariants (k <= m, eta >= 0) are enforced before submission. */

import type {
  Candidate,
  CategoryRow,
  JobState,
  RecommendRow,
  Snapshot,
  TailorCheckpoint,
  UserRow,
} from './api.js';

export type Prototype =
  | { kind: 'item'; itemId: string; imageUrl: string }
  | { kind: 'candidate'; imageRef: string; latent: number[] };

export type GalleryEntry = {
  imageRef: string;
  /** preference score displayed alongside every image */
  preference: number;
  objective: number;
  qualityPenalty: number;
  latent: number[];
  trace: number[];
};

export type StudioState = {
  users: UserRow[];
  categories: CategoryRow[];
  selectedUser: string | null;
  selectedCategory: number | null;
  eta: number;
  m: number;
  k: number;
  mode: 'rank' | 'sample';
  iterations: number;
  recommendations: RecommendRow[];
  activeJobId: string | null;
  activeJobKind: 'design' | 'tailor' | null;
  jobState: JobState | null;
  snapshots: Snapshot[];
  gallery: GalleryEntry[];
  tailorTimeline: TailorCheckpoint[];
  inversionError: number | null;
  prototype: Prototype | null;
  error: string | null;
};

export const initialState: StudioState = {
  users: [],
  categories: [],
  selectedUser: null,
  selectedCategory: null,
  eta: 1,
  m: 8,
  k: 3,
  mode: 'rank',
  iterations: 30,
  recommendations: [],
  activeJobId: null,
  activeJobKind: null,
  jobState: null,
  snapshots: [],
  gallery: [],
  tailorTimeline: [],
  inversionError: null,
  prototype: null,
  error: null,
};

export type Action =
  | { type: 'catalog-loaded'; users: UserRow[]; categories: CategoryRow[] }
  | { type: 'select-user'; userId: string }
  | { type: 'select-category'; categoryId: number }
  | { type: 'set-controls'; eta?: number; m?: number; k?: number; mode?: 'rank' | 'sample'; iterations?: number }
  | { type: 'recommendations-loaded'; rows: RecommendRow[] }
  | { type: 'job-started'; jobId: string; kind: 'design' | 'tailor' }
  | { type: 'snapshot'; snapshot: Snapshot }
  | { type: 'job-finished'; state: 'done' | 'failed'; record: JobResultPayload }
  | { type: 'select-prototype'; prototype: Prototype }
  | { type: 'error'; message: string | null };

export type JobResultPayload = {
  candidates?: Candidate[];
  checkpoints?: TailorCheckpoint[];
  inversion_error?: number;
  error?: string | null;
};

/** Pre-submission validation mirroring the service's DesignQuery rules. */
export function validateQuery(state: StudioState): string | null {
  if (!state.selectedUser) return 'select a user first';
  if (state.selectedCategory === null) return 'select a category first';
  if (!Number.isFinite(state.eta) || state.eta < 0) return 'eta must be >= 0';
  if (state.k < 1) return 'k must be at least 1';
  if (state.k > state.m) return `k (${state.k}) must not exceed m (${state.m})`;
  return null;
}

/** Insert a snapshot keeping steps strictly increasing; duplicates and
 * out-of-order deliveries are dropped rather than rendered out of order. */
export function insertSnapshot(existing: Snapshot[], snap: Snapshot): Snapshot[] {
  const last = existing[existing.length - 1];
  if (last && snap.step <= last.step) return existing;
  return [...existing, snap];
}

export function reduce(state: StudioState, action: Action): StudioState {
  switch (action.type) {
    case 'catalog-loaded':
      return { ...state, users: action.users, categories: action.categories };
    case 'select-user':
      return { ...state, selectedUser: action.userId, recommendations: [] };
    case 'select-category':
      return { ...state, selectedCategory: action.categoryId };
    case 'set-controls': {
      const { type: _ignored, ...controls } = action;
      return { ...state, ...controls };
    }
    case 'recommendations-loaded':
      return { ...state, recommendations: action.rows };
    case 'job-started':
      return {
        ...state,
        activeJobId: action.jobId,
        activeJobKind: action.kind,
        jobState: 'running',
        snapshots: [],
        gallery: action.kind === 'design' ? [] : state.gallery,
        tailorTimeline: action.kind === 'tailor' ? [] : state.tailorTimeline,
        inversionError: null,
        error: null,
      };
    case 'snapshot':
      return { ...state, snapshots: insertSnapshot(state.snapshots, action.snapshot) };
    case 'job-finished': {
      const next: StudioState = { ...state, jobState: action.state };
      if (action.state === 'failed') {
        return { ...next, error: action.record.error ?? 'job failed' };
      }
      if (action.record.candidates) {
        next.gallery = action.record.candidates.map((c) => ({
          imageRef: c.image_ref,
          preference: c.preference,
          objective: c.objective,
          qualityPenalty: c.quality_penalty,
          latent: c.latent,
          trace: c.trace,
        }));
      }
      if (action.record.checkpoints) {
        next.tailorTimeline = action.record.checkpoints;
        next.inversionError = action.record.inversion_error ?? null;
      }
      return next;
    }
    case 'select-prototype':
      return { ...state, prototype: action.prototype };
    case 'error':
      return { ...state, error: action.message };
    default:
      return state;
  }
}

/** The studio is stateless across reloads except for the current selection,
 * which lives in the URL fragment (#u=<user>&c=<category>). */
export function encodeSelection(state: StudioState): string {
  const parts: string[] = [];
  if (state.selectedUser) parts.push(`u=${encodeURIComponent(state.selectedUser)}`);
  if (state.selectedCategory !== null) parts.push(`c=${state.selectedCategory}`);
  return parts.length ? `#${parts.join('&')}` : '';
}

export function parseSelection(hash: string): { user: string | null; category: number | null } {
  const out: { user: string | null; category: number | null } = { user: null, category: null };
  for (const piece of hash.replace(/^#/, '').split('&')) {
    const [key, raw] = piece.split('=');
    if (key === 'u' && raw) out.user = decodeURIComponent(raw);
    if (key === 'c' && raw !== undefined && raw !== '' && !Number.isNaN(Number(raw))) {
      out.category = Number(raw);
    }
  }
  return out;
}

/** Log-scale slider mapping for the quality weight, covering the sweep
 * range [0, 10]: position 0 is exactly 0, the rest spans 0.1 .. 10. */
export function etaFromSlider(position: number): number {
  if (position <= 0) return 0;
  const value = Math.pow(10, position * 2 - 1); // position in (0, 1] -> 0.1 .. 10
  return Math.round(value * 100) / 100;
}

export function sliderFromEta(eta: number): number {
  if (eta <= 0) return 0;
  return Math.min(1, Math.max(0, (Math.log10(eta) + 1) / 2));
}
