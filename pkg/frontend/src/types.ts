export type SizeClass = "S" | "M" | "L";

export interface EntitySets {
  persons: string[];
  locations: string[];
  organisations: string[];
  misc: string[];
}

export const ENTITY_CATEGORIES: (keyof EntitySets)[] = [
  "persons",
  "locations",
  "organisations",
  "misc",
];

export interface DecodeOverrides {
  strategy?: "greedy" | "beam" | "sample";
  temperature?: number;
  top_k?: number | null;
  top_p?: number | null;
  num_beams?: number;
  repetition_penalty?: number;
  no_repeat_ngram_size?: number | null;
  min_length?: number;
  max_length?: number;
  seed?: number;
}

export interface GenerationRequest {
  p1: string;
  p3: string;
  genre: string;
  size: SizeClass;
  entities: Partial<EntitySets>;
  summary: string | string[];
  decode: DecodeOverrides;
  n_suggestions: number;
}

export interface Suggestion {
  text: string;
  stop_reason: string;
  seed: number;
}

export interface GenerationResponse {
  suggestions: Suggestion[];
  timing_ms: number;
}

export interface HealthResponse {
  role: string;
  model_checksum: string | null;
  vocab_checksum: string | null;
  uptime: number;
}
