// Payload shapes of the review-service JSON API. Duel payloads carry only
// opaque task ids and image URLs — method identities never reach the client.

export interface ReviewNext {
  item_id: string;
  composite_url: string;
  real_url: string;
  mask_url: string;
  pending: number;
}

export interface VerdictResult {
  item_id: string;
  status: "accepted" | "rejected";
  reason: string | null;
}

export interface CompareNext {
  task_id: string;
  image_a_url: string;
  image_b_url: string;
  remaining: number;
}

export interface Stats {
  items: number;
  pending: number;
  accepted: number;
  rejected: number;
  duels: number;
  served: number;
  comparisons: number;
}

export interface ComparisonRow {
  method_a: string;
  method_b: string;
  winner: string;
}

export interface ManifestRecord {
  record_id: string;
  composite_path: string;
  method: string;
  human_verdict: string | null;
}

export const REJECT_REASONS = [
  "occluded_foreground",
  "hue_change",
  "object_change",
  "unrealistic",
] as const;

export type RejectReason = (typeof REJECT_REASONS)[number];
