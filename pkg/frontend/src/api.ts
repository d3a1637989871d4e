/** Typed client for the retrieval service. The UI never computes
 * scores locally; every number it shows comes from these payloads. */

export interface SearchParams {
  M: number;
  T: number;
  alpha: number;
  depth: number;
}

export interface Hit {
  passage_id: string;
  rank: number;
  score: number;
  snippet?: string;
  doc_id?: string;
  title?: string;
  genre?: string;
  year?: number;
}

export interface ExpansionTerm {
  term: string;
  weight: number;
  kept: boolean;
}

export interface Expansion {
  fallback: boolean;
  fallback_reason: string | null;
  terms: ExpansionTerm[];
}

export interface SearchResponse {
  query: string;
  policy: string;
  params: SearchParams;
  unanswerable: boolean;
  hits: Hit[];
  expansion: Expansion;
  timing_ms: number;
}

export interface SearchRequestBody {
  query: string;
  policy: string;
  M: number;
  T: number;
  alpha: number;
  depth: number;
}

export const POLICIES = [
  "NonFiction_base",
  "NonFiction_RLM",
  "Fiction_RLM",
  "FictionNonFiction_RLM",
] as const;

export type PolicyId = (typeof POLICIES)[number];

/** Where a policy's expansion terms are estimated from. Base retrieval
 * has no feedback stage, hence no source. */
export const POLICY_SOURCE_GENRE: Record<string, string | null> = {
  NonFiction_base: null,
  NonFiction_RLM: "nonfiction",
  Fiction_RLM: "fiction",
  FictionNonFiction_RLM: "merged",
};

/** Server rejected the request (HTTP 4xx/5xx). Carries the service's
 * own error message so it can be shown inline. */
export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

function errorMessage(payload: unknown): string {
  if (payload && typeof payload === "object" && "error" in payload) {
    const value = (payload as { error: unknown }).error;
    if (typeof value === "string") return value;
  }
  return "request rejected";
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class SearchApi {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  /** POST /search. Throws ApiError on a 4xx/5xx response and lets
   * network-level failures (TypeError, AbortError) propagate so the
   * caller can offer a retry. */
  async search(body: SearchRequestBody, signal?: AbortSignal): Promise<SearchResponse> {
    const response = await this.fetchImpl(`${this.baseUrl}/search`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!response.ok) {
      let payload: unknown = null;
      try {
        payload = await response.json();
      } catch {
        // non-JSON error body; fall through to the generic message
      }
      throw new ApiError(response.status, errorMessage(payload));
    }
    return (await response.json()) as SearchResponse;
  }

  async topics(): Promise<Array<{ qid: string; query: string; variants: string[] }>> {
    const response = await this.fetchImpl(`${this.baseUrl}/topics`);
    if (!response.ok) throw new ApiError(response.status, "topics unavailable");
    return (await response.json()) as Array<{ qid: string; query: string; variants: string[] }>;
  }
}
