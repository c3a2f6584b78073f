/**
 * JSON API client for /api/ner, /api/generate and /health, with
 * cancel-on-supersede for in-flight requests.
 */

import type {
  EntitySets,
  GenerationRequest,
  GenerationResponse,
  HealthResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: unknown,
  ) {
    super(`API error ${status}`);
  }
}

async function postJson<T>(url: string, body: unknown, signal?: AbortSignal): Promise<T> {
  const response = await fetch(url, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
    signal,
  });
  const payload = await response.json().catch(() => null);
  if (!response.ok) throw new ApiError(response.status, payload);
  return payload as T;
}

export class ApiClient {
  constructor(public baseUrl: string = "") {}

  async health(): Promise<HealthResponse> {
    const response = await fetch(`${this.baseUrl}/health`);
    if (!response.ok) throw new ApiError(response.status, null);
    return (await response.json()) as HealthResponse;
  }

  async ner(text: string, signal?: AbortSignal): Promise<EntitySets> {
    const body = await postJson<{ entities: EntitySets }>(
      `${this.baseUrl}/api/ner`,
      { text },
      signal,
    );
    return body.entities;
  }

  async generate(
    request: GenerationRequest,
    signal?: AbortSignal,
  ): Promise<GenerationResponse> {
    return postJson<GenerationResponse>(`${this.baseUrl}/api/generate`, request, signal);
  }
}

/** Runs at most one request at a time; a newer call aborts the older one. */
export class LatestOnly {
  private controller: AbortController | null = null;

  async run<T>(task: (signal: AbortSignal) => Promise<T>): Promise<T> {
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    try {
      return await task(controller.signal);
    } finally {
      if (this.controller === controller) this.controller = null;
    }
  }

  abort(): void {
    this.controller?.abort();
    this.controller = null;
  }
}

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number,
): ((...args: A) => void) & { cancel: () => void } {
  let timer: ReturnType<typeof setTimeout> | null = null;
  const wrapped = (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, waitMs);
  };
  wrapped.cancel = () => {
    if (timer !== null) clearTimeout(timer);
    timer = null;
  };
  return wrapped;
}
