/**
 * Typed client for the probe service JSON API under /api/v1.
 *
 * Every method takes an optional AbortSignal so the caller can cancel a
 * request that has been superseded (the controller does this when the
 * user edits faster than round trips complete). Server-side failures
 * arrive as {code, message} envelopes and are rethrown as ApiError.
 */

export interface Meta {
  vocabulary: string;
  min_length: number;
  max_length: number;
  batch_size: number;
  image_size: number;
  datasets: string[];
}

export interface BatchInfo {
  batch_id: string;
  thumbnails: string[];
}

export interface JudgeResult {
  probabilities: number[];
  drawn: string;
}

export interface MutateResult extends JudgeResult {
  delta: number[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  input: string,
  init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
    signal?: AbortSignal;
  },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

async function errorFrom(status: number, payload: unknown): Promise<ApiError> {
  if (
    typeof payload === "object" &&
    payload !== null &&
    "code" in payload &&
    "message" in payload
  ) {
    const env = payload as { code: unknown; message: unknown };
    return new ApiError(status, String(env.code), String(env.message));
  }
  return new ApiError(status, "http_error", `request failed with status ${status}`);
}

/** What the controller needs from the wire; ProbeApi is the real one. */
export interface ProbeApiSurface {
  meta(signal?: AbortSignal): Promise<Meta>;
  createBatch(dataset: string, seed: number, signal?: AbortSignal): Promise<BatchInfo>;
  speak(image: string, length: number, signal?: AbortSignal): Promise<{ symbols: string }>;
  judge(symbols: string, batchId: string, signal?: AbortSignal): Promise<JudgeResult>;
  mutate(
    symbols: string,
    position: number,
    newSymbol: string,
    batchId: string,
    signal?: AbortSignal,
  ): Promise<MutateResult>;
}

export class ProbeApi implements ProbeApiSurface {
  constructor(
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
    private readonly base: string = "",
  ) {}

  private async request<T>(
    method: "GET" | "POST",
    path: string,
    body?: unknown,
    signal?: AbortSignal,
  ): Promise<T> {
    const res = await this.fetchFn(`${this.base}/api/v1${path}`, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
      signal,
    });
    let payload: unknown = null;
    try {
      payload = await res.json();
    } catch {
      // fall through: a body-less error still gets a meaningful ApiError
    }
    if (!res.ok) {
      throw await errorFrom(res.status, payload);
    }
    return payload as T;
  }

  meta(signal?: AbortSignal): Promise<Meta> {
    return this.request("GET", "/meta", undefined, signal);
  }

  createBatch(dataset: string, seed: number, signal?: AbortSignal): Promise<BatchInfo> {
    return this.request("POST", "/batches", { dataset, seed }, signal);
  }

  speak(image: string, length: number, signal?: AbortSignal): Promise<{ symbols: string }> {
    return this.request("POST", "/speak", { image, length }, signal);
  }

  judge(symbols: string, batchId: string, signal?: AbortSignal): Promise<JudgeResult> {
    return this.request("POST", "/judge", { symbols, batch_id: batchId }, signal);
  }

  mutate(
    symbols: string,
    position: number,
    newSymbol: string,
    batchId: string,
    signal?: AbortSignal,
  ): Promise<MutateResult> {
    return this.request(
      "POST",
      "/mutate",
      { symbols, position, new_symbol: newSymbol, batch_id: batchId },
      signal,
    );
  }
}
