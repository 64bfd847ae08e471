/** Trace inspection helpers: pipeline step order and client-side
 * verification of the recorded fusion arithmetic. */

import { Fusion, TraceEvent } from "./api.js";

export const PIPELINE_STEPS = [
  "decompose",
  "kg_match",
  "traverse",
  "rewrite",
  "vector_search",
  "fuse",
  "naive",
  "refine",
  "condense",
  "followup",
] as const;

export const FUSION_TOLERANCE = 1e-9;

export interface FusionCheck {
  recomputed: number;
  recorded: number;
  mismatch: boolean;
}

/** Recompute alpha * max_chunk_sim + (1 - alpha) * graph_relevance and
 * flag the event when the recorded value drifts beyond the tolerance. */
export function checkFusion(fusion: Fusion): FusionCheck {
  const recomputed =
    fusion.alpha * fusion.max_chunk_sim +
    (1 - fusion.alpha) * fusion.graph_relevance;
  return {
    recomputed,
    recorded: fusion.value,
    mismatch: Math.abs(recomputed - fusion.value) > FUSION_TOLERANCE,
  };
}

export function fusionFromEvent(event: TraceEvent): Fusion | null {
  const detail = event.detail;
  if (!detail) return null;
  const { alpha, max_chunk_sim, graph_relevance, value } = detail as Partial<Fusion>;
  if (
    typeof alpha !== "number" ||
    typeof max_chunk_sim !== "number" ||
    typeof graph_relevance !== "number" ||
    typeof value !== "number"
  ) {
    return null;
  }
  return { alpha, max_chunk_sim, graph_relevance, value };
}
