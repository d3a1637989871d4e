/** Client-side search session: current query, policy, parameter
 * values, and an append-only history of submitted states. Nothing here
 * touches the network or the DOM. */

import { POLICIES, type PolicyId, type SearchRequestBody } from "./api.js";

// Benchmark sweep ranges. Sliders clamp to these; typed-in values may
// leave them, in which case the state is flagged off-grid.
export const GRID = {
  M: { min: 10, max: 100, step: 10 },
  T: { min: 20, max: 120, step: 10 },
} as const;

export const ALPHA_RANGE = { min: 0, max: 1, step: 0.05 } as const;
export const DEFAULT_DEPTH = 10;

export interface SessionState {
  query: string;
  policy: PolicyId;
  M: number;
  T: number;
  alpha: number;
  depth: number;
}

export interface OffGridFlags {
  M: boolean;
  T: boolean;
}

export function clamp(value: number, min: number, max: number): number {
  return Math.min(max, Math.max(min, value));
}

/** True for each parameter that sits outside the sweep range. Values
 * between grid steps (say M=15) still count as on-grid: the service
 * accepts them and the flag only marks extrapolation beyond the ranges
 * the benchmark actually swept. */
export function offGridFlags(state: Pick<SessionState, "M" | "T">): OffGridFlags {
  return {
    M: state.M < GRID.M.min || state.M > GRID.M.max,
    T: state.T < GRID.T.min || state.T > GRID.T.max,
  };
}

export function isOffGrid(state: Pick<SessionState, "M" | "T">): boolean {
  const flags = offGridFlags(state);
  return flags.M || flags.T;
}

export class SearchSession {
  state: SessionState = {
    query: "",
    policy: "NonFiction_base",
    M: GRID.M.min,
    T: GRID.T.min,
    alpha: 0.5,
    depth: DEFAULT_DEPTH,
  };

  private past: SessionState[] = [];

  get history(): readonly SessionState[] {
    return this.past;
  }

  canSubmit(): boolean {
    return this.state.query.trim().length > 0;
  }

  setQuery(text: string): void {
    this.state.query = text;
  }

  setPolicy(policy: string): void {
    if (!(POLICIES as readonly string[]).includes(policy)) {
      throw new Error(`unknown policy ${policy}`);
    }
    this.state.policy = policy as PolicyId;
  }

  /** Slider input: clamped to the sweep range. */
  setFromSlider(param: "M" | "T", value: number): void {
    this.state[param] = clamp(Math.round(value), GRID[param].min, GRID[param].max);
  }

  /** Free-entry input: kept as typed so scholars can probe outside the
   * sweep, with the off-grid flag doing the warning. */
  setFreeEntry(param: "M" | "T", value: number): void {
    this.state[param] = Math.round(value);
  }

  setAlpha(value: number): void {
    this.state.alpha = clamp(value, ALPHA_RANGE.min, ALPHA_RANGE.max);
  }

  setDepth(value: number): void {
    this.state.depth = Math.max(1, Math.round(value));
  }

  /** Snapshot the current state into history. Called on submit, so the
   * history is exactly the sequence of searches issued. */
  record(): SessionState {
    const snapshot = { ...this.state };
    this.past.push(snapshot);
    return snapshot;
  }

  /** Restore a history entry's full parameter state. The entry itself
   * stays in place; history only ever grows. */
  restore(index: number): void {
    const entry = this.past[index];
    if (entry === undefined) throw new Error(`no history entry ${index}`);
    this.state = { ...entry };
  }

  requestBody(): SearchRequestBody {
    const { query, policy, M, T, alpha, depth } = this.state;
    return { query, policy, M, T, alpha, depth };
  }
}
