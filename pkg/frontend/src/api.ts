import type {
  CompareNext,
  ComparisonRow,
  ManifestRecord,
  RejectReason,
  ReviewNext,
  Stats,
} from "./types.js";

// The server answers errors with {"error": tag} and a conventional status.
export class ApiError extends Error {
  constructor(
    public status: number,
    public tag: string,
  ) {
    super(`${status} ${tag}`);
  }
}

export interface ClientOptions {
  /** Origin prefix, e.g. "http://127.0.0.1:8700". Empty = same origin. */
  baseUrl?: string;
  fetchFn?: typeof fetch;
  /** Attempts after the first, on network failure only. */
  retries?: number;
  /** First backoff delay; doubles per attempt. */
  backoffMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

/** Posted verdicts/choices resolve to this; `duplicate` means the server had
 *  already recorded a decision for the target (our retry after a lost
 *  response, or another rater got there first). Either way it is recorded
 *  exactly once server-side and the caller should advance. */
export interface Ack {
  duplicate: boolean;
}

const wait = (ms: number): Promise<void> =>
  new Promise((resolve) => setTimeout(resolve, ms));

export class ApiClient {
  private base: string;
  private fetchFn: typeof fetch;
  private retries: number;
  private backoffMs: number;
  private sleep: (ms: number) => Promise<void>;

  constructor(opts: ClientOptions = {}) {
    this.base = opts.baseUrl ?? "";
    this.fetchFn = opts.fetchFn ?? fetch.bind(globalThis);
    this.retries = opts.retries ?? 4;
    this.backoffMs = opts.backoffMs ?? 250;
    this.sleep = opts.sleep ?? wait;
  }

  url(path: string): string {
    return this.base + path;
  }

  /** Fetch with backoff on network failure. Safe for the POSTs here too:
   *  the server keys every mutation to an item/task that accepts exactly
   *  one decision, so a retry of a landed-but-unacknowledged request comes
   *  back 409 instead of double-counting. */
  private async request(path: string, init?: RequestInit): Promise<Response> {
    let delay = this.backoffMs;
    for (let attempt = 0; ; attempt++) {
      try {
        return await this.fetchFn(this.url(path), init);
      } catch (err) {
        if (attempt >= this.retries) throw err;
        await this.sleep(delay);
        delay *= 2;
      }
    }
  }

  private async requestJson<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.request(path, init);
    if (!res.ok) {
      const body = await res.json().catch(() => ({}) as { error?: string });
      throw new ApiError(res.status, (body as { error?: string }).error ?? "unknown");
    }
    return (await res.json()) as T;
  }

  private post(path: string, body: unknown): Promise<Response> {
    return this.request(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async openSession(): Promise<string> {
    const out = await this.requestJson<{ session_id: string }>("/api/session", {
      method: "POST",
    });
    return out.session_id;
  }

  /** Next pending triage item, or null once the queue is empty. */
  async reviewNext(): Promise<ReviewNext | null> {
    try {
      return await this.requestJson<ReviewNext>("/api/review/next");
    } catch (err) {
      if (err instanceof ApiError && err.tag === "empty_queue") return null;
      throw err;
    }
  }

  async submitVerdict(
    itemId: string,
    verdict: "accept" | "reject",
    reason?: RejectReason,
  ): Promise<Ack> {
    const res = await this.post(
      `/api/review/${itemId}/verdict`,
      reason === undefined ? { verdict } : { verdict, reason },
    );
    if (res.status === 409) return { duplicate: true };
    if (!res.ok) {
      const body = await res.json().catch(() => ({}) as { error?: string });
      throw new ApiError(res.status, (body as { error?: string }).error ?? "unknown");
    }
    await res.json(); // VerdictResult; nothing the caller needs beyond the ack
    return { duplicate: false };
  }

  /** Next comparison for this session, or null once it has seen every duel. */
  async compareNext(sessionId: string): Promise<CompareNext | null> {
    try {
      return await this.requestJson<CompareNext>(
        `/api/compare/next?session=${encodeURIComponent(sessionId)}`,
      );
    } catch (err) {
      if (err instanceof ApiError && err.tag === "exhausted") return null;
      throw err;
    }
  }

  async submitChoice(
    taskId: string,
    sessionId: string,
    winner: "a" | "b",
  ): Promise<Ack> {
    const res = await this.post(
      `/api/compare/${taskId}?session=${encodeURIComponent(sessionId)}`,
      { winner },
    );
    if (res.status === 409) return { duplicate: true };
    if (!res.ok) {
      const body = await res.json().catch(() => ({}) as { error?: string });
      throw new ApiError(res.status, (body as { error?: string }).error ?? "unknown");
    }
    await res.json();
    return { duplicate: false };
  }

  async stats(): Promise<Stats> {
    return this.requestJson<Stats>("/api/stats");
  }

  async exportComparisons(): Promise<ComparisonRow[]> {
    const res = await this.request("/api/export/comparisons");
    if (!res.ok) {
      const body = await res.json().catch(() => ({}) as { error?: string });
      throw new ApiError(res.status, (body as { error?: string }).error ?? "unknown");
    }
    const text = await res.text();
    return text
      .split("\n")
      .filter((line) => line.trim() !== "")
      .map((line) => JSON.parse(line) as ComparisonRow);
  }

  async exportManifest(): Promise<ManifestRecord[]> {
    const out = await this.requestJson<{ records: ManifestRecord[] }>(
      "/api/export/manifest",
    );
    return out.records;
  }
}
