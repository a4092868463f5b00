/** Typed client for the design service. All numbers shown in the UI come
 * from these payloads; the client never computes scores itself. */

export type UserRow = { user_id: string; n_interactions: number };
export type CategoryRow = { category_id: number; name: string; n_items: number };
export type ItemRow = {
  item_id: string;
  category_id: number;
  category: string;
  image_url: string;
};
export type RecommendRow = {
  item_id: string;
  score: number;
  category: string;
  image_url: string;
};
export type Candidate = {
  image_ref: string;
  objective: number;
  preference: number;
  quality_penalty: number;
  latent: number[];
  trace: number[];
  start_index: number;
};
export type TailorCheckpoint = {
  step: number;
  preference: number;
  objective: number;
  image_ref: string;
};
export type Snapshot = {
  type: 'snapshot';
  index: number;
  step: number;
  objective: number;
  image_ref: string;
};
export type StreamEnd = { type: 'end'; state: 'done' | 'failed' };
export type StreamEvent = Snapshot | StreamEnd;
export type JobState = 'queued' | 'running' | 'done' | 'failed';
export type JobRecord = {
  job_id: string;
  kind: 'design' | 'tailor';
  state: JobState;
  snapshots: Array<{ step: number; objective: number; image_ref: string }>;
  result: {
    candidates?: Candidate[];
    checkpoints?: TailorCheckpoint[];
    final?: Candidate;
    inversion_error?: number;
    prototype_ref?: string;
  } | null;
  error: string | null;
};
export type DesignRequest = {
  user: string;
  category: number;
  eta: number;
  m: number;
  k: number;
  mode: 'rank' | 'sample';
  iterations?: number;
  seed?: number;
};
export type TailorRequest = {
  user: string;
  category: number;
  item_id?: string;
  image_b64?: string;
  iterations?: number;
  eta?: number;
  seed?: number;
};

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(public baseUrl: string = '') {}

  imageUrl(ref: string): string {
    return `${this.baseUrl}/images/${ref}`;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.baseUrl + path, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = await res.json();
        if (body && typeof body.error === 'string') detail = body.error;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  health(): Promise<{ status: string; ready: boolean }> {
    return this.request('/health');
  }

  users(page = 0, pageSize = 50): Promise<{ users: UserRow[]; total: number }> {
    return this.request(`/users?page=${page}&page_size=${pageSize}`);
  }

  categories(): Promise<{ categories: CategoryRow[] }> {
    return this.request('/categories');
  }

  items(category?: number | string, page = 0): Promise<{ items: ItemRow[]; total: number }> {
    const cat = category === undefined ? '' : `category=${encodeURIComponent(category)}&`;
    return this.request(`/items?${cat}page=${page}`);
  }

  recommend(user: string, k: number): Promise<{ user: string; items: RecommendRow[] }> {
    return this.request(`/recommend?user=${encodeURIComponent(user)}&k=${k}`);
  }

  design(body: DesignRequest): Promise<{ job_id: string }> {
    return this.request('/design', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  tailor(body: TailorRequest): Promise<{ job_id: string }> {
    return this.request('/tailor', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  job(jobId: string): Promise<JobRecord> {
    return this.request(`/jobs/${jobId}`);
  }

  /** Follow a job's newline-delimited JSON snapshot stream. Disconnects
   * resubscribe from the next un-seen index; resolves with the terminal
   * state. */
  async streamJob(
    jobId: string,
    onEvent: (ev: StreamEvent) => void,
    maxRetries = 5,
  ): Promise<'done' | 'failed'> {
    let nextIndex = 0;
    let retries = 0;
    for (;;) {
      try {
        const res = await fetch(
          `${this.baseUrl}/jobs/${jobId}/stream?from_index=${nextIndex}`,
        );
        if (!res.ok || !res.body) throw new ApiError(res.status, res.statusText);
        const endState = await consumeNdjson(res.body, (ev) => {
          if (ev.type === 'snapshot') nextIndex = Math.max(nextIndex, ev.index + 1);
          onEvent(ev);
        });
        if (endState) return endState;
        throw new Error('stream closed without a terminal event');
      } catch (err) {
        if (err instanceof ApiError && err.status === 404) throw err;
        retries += 1;
        if (retries > maxRetries) throw err;
        await new Promise((r) => setTimeout(r, 250 * retries));
      }
    }
  }
}

/** Parse an NDJSON byte stream, emitting each event; returns the terminal
 * state if an end event arrived. */
export async function consumeNdjson(
  body: ReadableStream<Uint8Array>,
  onEvent: (ev: StreamEvent) => void,
): Promise<'done' | 'failed' | null> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffer = '';
  let terminal: 'done' | 'failed' | null = null;
  for (;;) {
    const { done, value } = await reader.read();
    if (value) buffer += decoder.decode(value, { stream: true });
    const lines = buffer.split('\n');
    buffer = lines.pop() ?? '';
    for (const line of lines) {
      if (!line.trim()) continue;
      const ev = JSON.parse(line) as StreamEvent;
      if (ev.type === 'end') terminal = ev.state;
      onEvent(ev);
    }
    if (done) return terminal;
  }
}
