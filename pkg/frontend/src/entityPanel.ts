/**
 * Entity panel state: four category lists mirroring /api/ner results,
 * with per-entity checkboxes and user edits that survive refreshes.
 */

import { ENTITY_CATEGORIES, type EntitySets } from "./types.js";

export interface EntityRow {
  name: string;
  checked: boolean;
  /** true for names the user typed or renamed; they outlive NER refreshes */
  user: boolean;
}

export interface PanelState {
  categories: Record<keyof EntitySets, EntityRow[]>;
  stale: boolean;
}

export function emptyPanel(): PanelState {
  return {
    categories: { persons: [], locations: [], organisations: [], misc: [] },
    stale: false,
  };
}

/**
 * Merge a fresh NER result into the panel: detected names replace previous
 * auto-detected rows (keeping their checkbox state), user rows persist.
 */
export function mergeEntities(prev: PanelState, detected: EntitySets): PanelState {
  const next = emptyPanel();
  for (const category of ENTITY_CATEGORIES) {
    const previous = prev.categories[category];
    const byName = new Map(previous.map((row) => [row.name.toLowerCase(), row]));
    const rows: EntityRow[] = [];
    const seen = new Set<string>();
    for (const name of detected[category] ?? []) {
      const key = name.toLowerCase();
      if (seen.has(key)) continue;
      seen.add(key);
      const old = byName.get(key);
      rows.push({ name: old?.user ? old.name : name, checked: old?.checked ?? false, user: old?.user ?? false });
    }
    for (const row of previous) {
      if (row.user && !seen.has(row.name.toLowerCase())) {
        seen.add(row.name.toLowerCase());
        rows.push({ ...row });
      }
    }
    next.categories[category] = rows;
  }
  return next;
}

export function setChecked(state: PanelState, category: keyof EntitySets, name: string, checked: boolean): PanelState {
  const rows = state.categories[category].map((row) =>
    row.name === name ? { ...row, checked } : row,
  );
  return { ...state, categories: { ...state.categories, [category]: rows } };
}

export function renameEntity(state: PanelState, category: keyof EntitySets, name: string, newName: string): PanelState {
  const rows = state.categories[category].map((row) =>
    row.name === name ? { ...row, name: newName, user: true } : row,
  );
  return { ...state, categories: { ...state.categories, [category]: rows } };
}

export function addEntity(state: PanelState, category: keyof EntitySets, name: string): PanelState {
  const trimmed = name.trim();
  if (!trimmed) return state;
  const exists = state.categories[category].some(
    (row) => row.name.toLowerCase() === trimmed.toLowerCase(),
  );
  if (exists) return state;
  const rows = [...state.categories[category], { name: trimmed, checked: true, user: true }];
  return { ...state, categories: { ...state.categories, [category]: rows } };
}

/** The checked subset, shaped for a GenerationRequest. */
export function selectedEntities(state: PanelState): Partial<EntitySets> {
  const out: Partial<EntitySets> = {};
  for (const category of ENTITY_CATEGORIES) {
    const names = state.categories[category].filter((r) => r.checked).map((r) => r.name);
    if (names.length) out[category] = names;
  }
  return out;
}
