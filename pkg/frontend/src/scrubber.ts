import type { SegmentResponse, SliceTag, SliceTagEntry } from "./types.js";

export interface BadgeModel {
  entries: SliceTagEntry[];
  counts: Record<SliceTag, number>;
  promptedSlices: number[];
}

/** Normalize a segment response into the scrubber's badge model, filling any
 * slices the service omitted with 'empty'. */
export function badgeModel(summary: SegmentResponse, sliceCount: number): BadgeModel {
  const byIndex = new Map(summary.slices.map((e) => [e.slice, e.tag]));
  const entries: SliceTagEntry[] = [];
  const counts: Record<SliceTag, number> = { segmented: 0, interpolated: 0, empty: 0 };
  for (let z = 0; z < sliceCount; z++) {
    const tag = byIndex.get(z) ?? "empty";
    entries.push({ slice: z, tag });
    counts[tag] += 1;
  }
  return { entries, counts, promptedSlices: [...summary.prompted_slices].sort((a, b) => a - b) };
}

export function badgeClass(tag: SliceTag): string {
  return `badge badge-${tag}`;
}

export function badgeTitle(entry: SliceTagEntry): string {
  return `slice ${entry.slice}: ${entry.tag}`;
}
