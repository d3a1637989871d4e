/** HTML fragment builders. Pure string functions so the panels can be
 * asserted on in tests without a DOM; main.ts assigns the output to
 * innerHTML. Every number rendered here is copied from an API payload,
 * never recomputed. */

import type { Expansion, Hit, SearchResponse } from "./api.js";
import { POLICY_SOURCE_GENRE } from "./api.js";
import type { DiffRow } from "./diff.js";
import { type OffGridFlags } from "./session.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function formatScore(score: number): string {
  return score.toFixed(4);
}

function formatWeight(weight: number): string {
  return weight.toFixed(4);
}

export function renderHits(hits: Hit[]): string {
  if (hits.length === 0) {
    return '<p class="empty">no results</p>';
  }
  const items = hits.map((hit) => {
    const badge = hit.genre
      ? `<span class="badge genre-${escapeHtml(hit.genre)}">${escapeHtml(hit.genre)}</span>`
      : "";
    const title = hit.title
      ? `<span class="title">${escapeHtml(hit.title)}</span>`
      : `<span class="title">${escapeHtml(hit.passage_id)}</span>`;
    const year = hit.year !== undefined ? `<span class="year">${hit.year}</span>` : "";
    const snippet = hit.snippet ? `<p class="snippet">${escapeHtml(hit.snippet)}</p>` : "";
    return (
      `<li class="hit" data-passage="${escapeHtml(hit.passage_id)}">` +
      `<span class="rank">${hit.rank}</span> ${title} ${badge} ${year}` +
      `<span class="score">${formatScore(hit.score)}</span>${snippet}</li>`
    );
  });
  return `<ol class="hits">${items.join("")}</ol>`;
}

/** Expansion panel: terms with weights and provenance. Terms removed
 * by the vocabulary filter stay visible but struck through, so the
 * transfer mechanism is inspectable rather than hidden. */
export function renderExpansion(expansion: Expansion, policy: string): string {
  const source = POLICY_SOURCE_GENRE[policy] ?? null;
  if (source === null) {
    return '<p class="empty">no feedback stage for this policy</p>';
  }
  const parts: string[] = [`<p class="source">expansion terms from the ${escapeHtml(source)} index</p>`];
  if (expansion.fallback) {
    const reason = expansion.fallback_reason ?? "unknown";
    parts.push(`<p class="fallback">fell back to the original query (${escapeHtml(reason)})</p>`);
  }
  if (expansion.terms.length === 0) {
    parts.push('<p class="empty">no expansion terms</p>');
    return parts.join("");
  }
  const rows = expansion.terms.map((term) => {
    const label = term.kept
      ? escapeHtml(term.term)
      : `<s>${escapeHtml(term.term)}</s>`;
    const status = term.kept ? "kept" : "filtered";
    return (
      `<tr class="term ${status}"><td>${label}</td>` +
      `<td class="weight">${formatWeight(term.weight)}</td>` +
      `<td class="status">${status}</td></tr>`
    );
  });
  parts.push(
    `<table class="expansion"><thead><tr><th>term</th><th>weight</th><th>status</th></tr></thead>` +
      `<tbody>${rows.join("")}</tbody></table>`,
  );
  return parts.join("");
}

export function renderOffGrid(flags: OffGridFlags): string {
  const names = (["M", "T"] as const).filter((p) => flags[p]);
  if (names.length === 0) return "";
  return `<span class="off-grid">off-grid: ${names.join(", ")} outside the swept range</span>`;
}

export function renderError(message: string, retryable: boolean): string {
  const retry = retryable ? ' <button class="retry" data-action="retry">retry</button>' : "";
  return `<p class="error">${escapeHtml(message)}${retry}</p>`;
}

export function renderTiming(response: SearchResponse): string {
  return `<span class="timing">${response.timing_ms} ms</span>`;
}

/** Comparison table with per-row highlighting classes. */
export function renderDiff(rows: DiffRow[]): string {
  if (rows.length === 0) return '<p class="empty">nothing to compare</p>';
  const body = rows.map((row) => {
    const left = row.leftRank === null ? "&mdash;" : String(row.leftRank);
    const right = row.rightRank === null ? "&mdash;" : String(row.rightRank);
    const delta =
      row.delta === null ? "" : row.delta > 0 ? `&uarr;${row.delta}` : row.delta < 0 ? `&darr;${-row.delta}` : "=";
    return (
      `<tr class="diff ${row.status}" data-passage="${escapeHtml(row.passage_id)}">` +
      `<td>${escapeHtml(row.passage_id)}</td><td>${left}</td><td>${right}</td>` +
      `<td class="delta">${delta}</td></tr>`
    );
  });
  return (
    `<table class="compare"><thead><tr><th>passage</th><th>left</th><th>right</th><th>&Delta;</th></tr></thead>` +
    `<tbody>${body.join("")}</tbody></table>`
  );
}

export function renderHistoryEntry(
  entry: { query: string; policy: string; M: number; T: number; alpha: number },
  index: number,
): string {
  return (
    `<li class="history" data-index="${index}"><button data-action="restore" data-index="${index}">` +
    `${escapeHtml(entry.query)} &middot; ${escapeHtml(entry.policy)} ` +
    `(M=${entry.M}, T=${entry.T}, &alpha;=${entry.alpha})</button></li>`
  );
}
