/** Rank comparison for the side-by-side view. Takes two ranked hit
 * lists for the same query and aligns them by passage id. */

export interface RankedHit {
  passage_id: string;
  rank: number;
}

export type DiffStatus = "unchanged" | "moved" | "left-only" | "right-only";

export interface DiffRow {
  passage_id: string;
  leftRank: number | null;
  rightRank: number | null;
  /** leftRank - rightRank when present on both sides: positive means
   * the passage climbed in the right-hand ranking. */
  delta: number | null;
  status: DiffStatus;
}

/** Align two rankings by passage id. Rows are ordered by the best rank
 * a passage reaches on either side, ties by passage id, so the top of
 * the table is the top of both result lists. */
export function diffRankings(left: RankedHit[], right: RankedHit[]): DiffRow[] {
  const leftRanks = new Map(left.map((hit) => [hit.passage_id, hit.rank]));
  const rightRanks = new Map(right.map((hit) => [hit.passage_id, hit.rank]));
  const ids = new Set([...leftRanks.keys(), ...rightRanks.keys()]);

  const rows: DiffRow[] = [];
  for (const passageId of ids) {
    const leftRank = leftRanks.get(passageId) ?? null;
    const rightRank = rightRanks.get(passageId) ?? null;
    let status: DiffStatus;
    let delta: number | null = null;
    if (leftRank === null) {
      status = "right-only";
    } else if (rightRank === null) {
      status = "left-only";
    } else {
      delta = leftRank - rightRank;
      status = delta === 0 ? "unchanged" : "moved";
    }
    rows.push({ passage_id: passageId, leftRank, rightRank, delta, status });
  }

  rows.sort((a, b) => {
    const bestA = Math.min(a.leftRank ?? Infinity, a.rightRank ?? Infinity);
    const bestB = Math.min(b.leftRank ?? Infinity, b.rightRank ?? Infinity);
    if (bestA !== bestB) return bestA - bestB;
    return a.passage_id < b.passage_id ? -1 : a.passage_id > b.passage_id ? 1 : 0;
  });
  return rows;
}

/** Fraction of left results also present on the right (and vice versa
 * via the second field); 1 when both sides are empty. */
export function rankOverlap(left: RankedHit[], right: RankedHit[]): number {
  if (left.length === 0 && right.length === 0) return 1;
  const rightIds = new Set(right.map((hit) => hit.passage_id));
  const shared = left.filter((hit) => rightIds.has(hit.passage_id)).length;
  return shared / Math.max(left.length, right.length);
}
