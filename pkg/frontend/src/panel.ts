/** One result panel's async state. At most one request is in flight
 * per panel: a new submit aborts the previous request, and a stale
 * response that still arrives is dropped (latest wins). */

import { ApiError, type SearchApi, type SearchRequestBody, type SearchResponse } from "./api.js";

export type PanelStatus = "idle" | "loading" | "ready" | "error";

export interface PanelView {
  status: PanelStatus;
  response: SearchResponse | null;
  errorMessage: string | null;
  /** Network-level failures are retryable; a 400 means the request
   * itself is wrong and resubmitting unchanged would not help. */
  retryable: boolean;
}

export class SearchPanel {
  view: PanelView = { status: "idle", response: null, errorMessage: null, retryable: false };

  private sequence = 0;
  private controller: AbortController | null = null;
  private lastBody: SearchRequestBody | null = null;

  constructor(
    private api: SearchApi,
    private onChange: (view: PanelView) => void = () => {},
  ) {}

  async submit(body: SearchRequestBody): Promise<void> {
    this.lastBody = { ...body };
    const ticket = ++this.sequence;
    this.controller?.abort();
    this.controller = new AbortController();
    this.update({ status: "loading", response: this.view.response, errorMessage: null, retryable: false });

    try {
      const response = await this.api.search(body, this.controller.signal);
      if (ticket !== this.sequence) return; // a newer submit superseded this one
      this.update({ status: "ready", response, errorMessage: null, retryable: false });
    } catch (error) {
      if (ticket !== this.sequence) return;
      if (error instanceof DOMException && error.name === "AbortError") return;
      if (error instanceof ApiError) {
        this.update({ status: "error", response: null, errorMessage: error.message, retryable: false });
      } else {
        const message = error instanceof Error ? error.message : String(error);
        this.update({ status: "error", response: null, errorMessage: message, retryable: true });
      }
    }
  }

  /** Re-issue the last submitted request (the retry affordance). */
  async retry(): Promise<void> {
    if (this.lastBody === null) return;
    await this.submit(this.lastBody);
  }

  private update(view: PanelView): void {
    this.view = view;
    this.onChange(view);
  }
}
