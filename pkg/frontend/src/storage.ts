/** Document autosave in browser local storage. */

import { deserializeDoc, serializeDoc, type EditorDoc } from "./editorState.js";

const DOC_KEY = "parafill.document";

export function persistDocument(doc: EditorDoc, store: Storage = localStorage): void {
  store.setItem(DOC_KEY, serializeDoc(doc));
}

export function restoreDocument(store: Storage = localStorage): EditorDoc {
  return deserializeDoc(store.getItem(DOC_KEY));
}

export function clearDocument(store: Storage = localStorage): void {
  store.removeItem(DOC_KEY);
}
