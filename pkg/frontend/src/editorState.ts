/**
 * Editor document model: an ordered list of text segments, each optionally
 * carrying generation provenance (the seed and request that produced it).
 * Provenance segments render as highlighted spans. Any operation that
 * lands strictly inside a provenance segment clears that segment's
 * provenance; the text itself always survives. Boundary edits leave
 * neighbours intact.
 */

import type { GenerationRequest } from "./types.js";

export interface Provenance {
  seed: number;
  request: GenerationRequest;
}

export interface Segment {
  text: string;
  provenance: Provenance | null;
}

export interface EditorDoc {
  segments: Segment[];
}

export function emptyDoc(): EditorDoc {
  return { segments: [] };
}

export function docText(doc: EditorDoc): string {
  return doc.segments.map((s) => s.text).join("");
}

export function docLength(doc: EditorDoc): number {
  return doc.segments.reduce((n, s) => n + s.text.length, 0);
}

export interface MarkerRange {
  start: number;
  end: number;
  provenance: Provenance;
}

/** Character ranges of highlighted (generated) spans. */
export function markerRanges(doc: EditorDoc): MarkerRange[] {
  const out: MarkerRange[] = [];
  let offset = 0;
  for (const seg of doc.segments) {
    if (seg.provenance && seg.text.length > 0) {
      out.push({ start: offset, end: offset + seg.text.length, provenance: seg.provenance });
    }
    offset += seg.text.length;
  }
  return out;
}

function normalize(doc: EditorDoc): EditorDoc {
  const segments: Segment[] = [];
  for (const seg of doc.segments) {
    if (seg.text.length === 0) continue;
    const last = segments[segments.length - 1];
    if (last && last.provenance === null && seg.provenance === null) {
      last.text += seg.text;
    } else {
      segments.push({ ...seg });
    }
  }
  return { segments };
}

function clamp(value: number, lo: number, hi: number): number {
  return Math.max(lo, Math.min(hi, value));
}

/**
 * Replace [start, end) with plain text typed by the user. Surviving parts
 * of any segment the edit touches lose their provenance.
 */
export function applyEdit(
  doc: EditorDoc,
  start: number,
  end: number,
  replacement: string,
): EditorDoc {
  const total = docLength(doc);
  start = clamp(start, 0, total);
  end = clamp(end, start, total);
  const out: Segment[] = [];
  let pos = 0;
  let inserted = false;
  const pushReplacement = () => {
    if (!inserted) {
      out.push({ text: replacement, provenance: null });
      inserted = true;
    }
  };
  for (const seg of doc.segments) {
    const segStart = pos;
    const segEnd = pos + seg.text.length;
    pos = segEnd;
    const touched = start < segEnd && end > segStart;
    if (!touched) {
      if (segStart >= start) pushReplacement();
      out.push({ ...seg });
      continue;
    }
    const head = start > segStart ? seg.text.slice(0, start - segStart) : "";
    const tail = end < segEnd ? seg.text.slice(end - segStart) : "";
    if (head) out.push({ text: head, provenance: null });
    pushReplacement();
    if (tail) out.push({ text: tail, provenance: null });
  }
  pushReplacement();
  return normalize({ segments: out });
}

/** Insert a generated suggestion at a cursor offset as a highlighted span. */
export function insertSuggestion(
  doc: EditorDoc,
  offset: number,
  text: string,
  provenance: Provenance,
): EditorDoc {
  const total = docLength(doc);
  offset = clamp(offset, 0, total);
  const out: Segment[] = [];
  let pos = 0;
  let inserted = false;
  const pushSuggestion = () => {
    if (!inserted) {
      out.push({ text, provenance });
      inserted = true;
    }
  };
  for (const seg of doc.segments) {
    const segStart = pos;
    const segEnd = pos + seg.text.length;
    pos = segEnd;
    if (segStart >= offset) pushSuggestion();
    if (offset > segStart && offset < segEnd) {
      // Splitting a segment counts as landing inside it.
      out.push({ text: seg.text.slice(0, offset - segStart), provenance: null });
      pushSuggestion();
      out.push({ text: seg.text.slice(offset - segStart), provenance: null });
    } else {
      out.push({ ...seg });
    }
  }
  pushSuggestion();
  return normalize({ segments: out });
}

/** The paragraph-infilling split: text before the cursor is P1, after is P3. */
export function splitContext(text: string, cursor: number): { p1: string; p3: string } {
  const at = clamp(cursor, 0, text.length);
  return { p1: text.slice(0, at).trim(), p3: text.slice(at).trim() };
}

export function serializeDoc(doc: EditorDoc): string {
  return JSON.stringify(doc.segments);
}

export function deserializeDoc(raw: string | null): EditorDoc {
  if (!raw) return emptyDoc();
  try {
    const segments = JSON.parse(raw) as Segment[];
    if (!Array.isArray(segments)) return emptyDoc();
    return normalize({
      segments: segments.filter(
        (s) => s !== null && typeof s === "object" && typeof s.text === "string",
      ),
    });
  } catch {
    return emptyDoc();
  }
}
