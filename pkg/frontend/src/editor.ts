/**
 * The writing studio app: contenteditable editor with highlighted
 * generated spans, live entity panel, generation controls, and suggestion
 * cards. All document mutations flow through the segment model so the DOM
 * always mirrors the state; tests drive the same controller methods the
 * DOM handlers use.
 */

import { ApiClient, ApiError, LatestOnly, debounce } from "./api.js";
import {
  applyEdit,
  docLength,
  docText,
  emptyDoc,
  insertSuggestion,
  markerRanges,
  splitContext,
  type EditorDoc,
} from "./editorState.js";
import {
  addEntity,
  emptyPanel,
  mergeEntities,
  renameEntity,
  selectedEntities,
  setChecked,
  type PanelState,
} from "./entityPanel.js";
import { persistDocument, restoreDocument } from "./storage.js";
import type { EntitySets, GenerationRequest, SizeClass, Suggestion } from "./types.js";

export interface EditorElements {
  editor: HTMLElement;
  panel: HTMLElement;
  suggestions: HTMLElement;
  status: HTMLElement;
  genre: HTMLSelectElement;
  size: HTMLSelectElement;
  generateButton: HTMLElement;
}

export interface EditorOptions {
  api?: ApiClient;
  storage?: Storage;
  nerDebounceMs?: number;
  nSuggestions?: number;
}

interface SuggestionCard extends Suggestion {
  request: GenerationRequest;
}

export class EditorApp {
  doc: EditorDoc;
  panel: PanelState;
  cursor = 0;
  selection: { start: number; end: number } | null = null;
  cards: SuggestionCard[] = [];
  readonly api: ApiClient;

  private readonly els: EditorElements;
  private readonly store: Storage;
  private readonly nerGate = new LatestOnly();
  private readonly genGate = new LatestOnly();
  private readonly scheduleNer: ReturnType<typeof debounce<[]>>;
  private readonly scheduleSave: ReturnType<typeof debounce<[]>>;

  constructor(els: EditorElements, options: EditorOptions = {}) {
    this.els = els;
    this.api = options.api ?? new ApiClient("");
    this.store = options.storage ?? localStorage;
    this.doc = restoreDocument(this.store);
    this.panel = emptyPanel();
    this.cursor = docLength(this.doc);
    this.scheduleNer = debounce(() => void this.refreshEntities(), options.nerDebounceMs ?? 800);
    this.scheduleSave = debounce(() => persistDocument(this.doc, this.store), 400);
    this.bindDom();
    this.renderDoc();
    this.renderPanel();
    if (docText(this.doc).trim()) this.scheduleNer();
  }

  // ---- controller methods (DOM handlers and tests both call these) ----

  typeText(text: string): void {
    const { start, end } = this.editRange();
    this.doc = applyEdit(this.doc, start, end, text);
    this.cursor = start + text.length;
    this.selection = null;
    this.afterDocChange();
  }

  deleteBackward(): void {
    const { start, end } = this.editRange();
    const from = start === end ? Math.max(0, start - 1) : start;
    this.doc = applyEdit(this.doc, from, end, "");
    this.cursor = from;
    this.selection = null;
    this.afterDocChange();
  }

  setCursor(offset: number): void {
    this.cursor = Math.max(0, Math.min(offset, docLength(this.doc)));
    this.selection = null;
  }

  select(start: number, end: number): void {
    this.cursor = end;
    this.selection = { start: Math.min(start, end), end: Math.max(start, end) };
  }

  async refreshEntities(): Promise<void> {
    try {
      const detected = await this.nerGate.run((signal) =>
        this.api.ner(docText(this.doc), signal),
      );
      this.panel = mergeEntities({ ...this.panel, stale: false }, detected);
      this.panel.stale = false;
    } catch (error) {
      if ((error as Error).name === "AbortError") return;
      this.panel = { ...this.panel, stale: true };
    }
    this.renderPanel();
  }

  buildRequest(seed?: number): GenerationRequest {
    const text = docText(this.doc);
    const { p1, p3 } = splitContext(text, this.cursor);
    const summary = this.selection
      ? text.slice(this.selection.start, this.selection.end).trim()
      : "";
    return {
      p1,
      p3,
      genre: this.els.genre.value,
      size: this.els.size.value as SizeClass,
      entities: selectedEntities(this.panel),
      summary,
      decode: seed === undefined ? {} : { seed },
      n_suggestions: seed === undefined ? 3 : 1,
    };
  }

  async requestGeneration(seed?: number): Promise<void> {
    const request = this.buildRequest(seed);
    this.setStatus("generating…");
    try {
      const response = await this.genGate.run((signal) => this.api.generate(request, signal));
      this.cards = response.suggestions.map((s) => ({ ...s, request }));
      this.setStatus(`${response.suggestions.length} suggestions in ${Math.round(response.timing_ms)} ms`);
    } catch (error) {
      if ((error as Error).name === "AbortError") return;
      if (error instanceof ApiError && error.status === 422) {
        const body = error.body as { detail?: string; token_counts?: Record<string, number> };
        const counts = body?.token_counts
          ? Object.entries(body.token_counts).map(([k, v]) => `${k}=${v}`).join(" ")
          : "";
        this.setStatus(`context too large: ${counts}`);
      } else {
        this.setStatus("generation failed — is the server running?");
      }
      this.cards = [];
    }
    this.renderSuggestions();
  }

  acceptSuggestion(index: number): void {
    const card = this.cards[index];
    if (!card) return;
    this.doc = insertSuggestion(this.doc, this.cursor, card.text, {
      seed: card.seed,
      request: card.request,
    });
    this.cursor += card.text.length;
    this.cards = [];
    this.renderSuggestions();
    this.afterDocChange();
  }

  async regenerate(index: number): Promise<void> {
    const card = this.cards[index];
    if (!card) return;
    await this.requestGeneration(card.seed);
  }

  toggleEntity(category: keyof EntitySets, name: string, checked: boolean): void {
    this.panel = setChecked(this.panel, category, name, checked);
  }

  editEntity(category: keyof EntitySets, name: string, newName: string): void {
    this.panel = renameEntity(this.panel, category, name, newName);
    this.renderPanel();
  }

  addUserEntity(category: keyof EntitySets, name: string): void {
    this.panel = addEntity(this.panel, category, name);
    this.renderPanel();
  }

  flush(): void {
    this.scheduleSave.cancel();
    persistDocument(this.doc, this.store);
  }

  // ---- DOM plumbing ----

  private afterDocChange(): void {
    this.renderDoc();
    this.scheduleSave();
    this.scheduleNer();
  }

  private editRange(): { start: number; end: number } {
    if (this.selection) return this.selection;
    return { start: this.cursor, end: this.cursor };
  }

  private setStatus(message: string): void {
    this.els.status.textContent = message;
  }

  private bindDom(): void {
    const editor = this.els.editor;
    editor.setAttribute("contenteditable", "true");
    editor.addEventListener("beforeinput", (event) => {
      const input = event as InputEvent;
      event.preventDefault();
      this.syncCursorFromDom();
      if (input.inputType === "insertText" && input.data) this.typeText(input.data);
      else if (input.inputType === "insertParagraph" || input.inputType === "insertLineBreak")
        this.typeText("\n");
      else if (input.inputType === "deleteContentBackward") this.deleteBackward();
      else if (input.inputType === "insertFromPaste") {
        const text = input.dataTransfer?.getData("text/plain") ?? "";
        if (text) this.typeText(text);
      }
    });
    const syncSelection = () => this.syncCursorFromDom();
    editor.addEventListener("mouseup", syncSelection);
    editor.addEventListener("keyup", syncSelection);
    this.els.generateButton.addEventListener("click", () => void this.requestGeneration());
    window.addEventListener("beforeunload", () => this.flush());
  }

  private syncCursorFromDom(): void {
    const selection = window.getSelection?.();
    if (!selection || selection.rangeCount === 0) return;
    const range = selection.getRangeAt(0);
    if (!this.els.editor.contains(range.startContainer)) return;
    const start = this.domPointToOffset(range.startContainer, range.startOffset);
    const end = this.domPointToOffset(range.endContainer, range.endOffset);
    if (start === end) this.setCursor(start);
    else this.select(start, end);
  }

  private domPointToOffset(node: Node, offsetInNode: number): number {
    let offset = 0;
    const walk = (current: Node): boolean => {
      if (current === node) {
        offset += current.nodeType === Node.TEXT_NODE ? offsetInNode : 0;
        return true;
      }
      if (current.nodeType === Node.TEXT_NODE) {
        offset += (current.textContent ?? "").length;
        return false;
      }
      for (const child of Array.from(current.childNodes)) {
        if (walk(child)) return true;
      }
      return false;
    };
    walk(this.els.editor);
    return Math.min(offset, docLength(this.doc));
  }

  renderDoc(): void {
    const editor = this.els.editor;
    editor.textContent = "";
    for (const segment of this.doc.segments) {
      if (segment.provenance) {
        const span = document.createElement("span");
        span.className = "gen";
        span.dataset.seed = String(segment.provenance.seed);
        span.textContent = segment.text;
        editor.appendChild(span);
      } else {
        editor.appendChild(document.createTextNode(segment.text));
      }
    }
    this.restoreCaret();
  }

  private restoreCaret(): void {
    const selection = window.getSelection?.();
    if (!selection) return;
    let remaining = this.cursor;
    const place = (node: Node): boolean => {
      if (node.nodeType === Node.TEXT_NODE) {
        const length = (node.textContent ?? "").length;
        if (remaining <= length) {
          const range = document.createRange();
          range.setStart(node, remaining);
          range.collapse(true);
          selection.removeAllRanges();
          selection.addRange(range);
          return true;
        }
        remaining -= length;
        return false;
      }
      for (const child of Array.from(node.childNodes)) {
        if (place(child)) return true;
      }
      return false;
    };
    try {
      place(this.els.editor);
    } catch {
      // Caret restore is cosmetic; never let it break rendering.
    }
  }

  renderPanel(): void {
    const root = this.els.panel;
    root.textContent = "";
    if (this.panel.stale) {
      const badge = document.createElement("div");
      badge.className = "stale-badge";
      badge.textContent = "entity data may be stale (server unreachable)";
      root.appendChild(badge);
    }
    for (const category of ["persons", "locations", "organisations", "misc"] as const) {
      const section = document.createElement("section");
      section.dataset.category = category;
      const heading = document.createElement("h3");
      heading.textContent = category;
      section.appendChild(heading);
      for (const row of this.panel.categories[category]) {
        const label = document.createElement("label");
        label.className = "entity-row";
        const checkbox = document.createElement("input");
        checkbox.type = "checkbox";
        checkbox.checked = row.checked;
        checkbox.addEventListener("change", () =>
          this.toggleEntity(category, row.name, checkbox.checked),
        );
        const nameField = document.createElement("input");
        nameField.type = "text";
        nameField.value = row.name;
        nameField.addEventListener("change", () =>
          this.editEntity(category, row.name, nameField.value),
        );
        label.appendChild(checkbox);
        label.appendChild(nameField);
        section.appendChild(label);
      }
      root.appendChild(section);
    }
  }

  renderSuggestions(): void {
    const root = this.els.suggestions;
    root.textContent = "";
    this.cards.forEach((card, index) => {
      const div = document.createElement("article");
      div.className = "suggestion-card";
      const text = document.createElement("p");
      text.textContent = card.text;
      const meta = document.createElement("footer");
      meta.textContent = `seed ${card.seed} · ${card.stop_reason}`;
      const accept = document.createElement("button");
      accept.textContent = "Insert";
      accept.className = "accept";
      accept.addEventListener("click", () => this.acceptSuggestion(index));
      const again = document.createElement("button");
      again.textContent = "Regenerate";
      again.className = "regen";
      again.addEventListener("click", () => void this.regenerate(index));
      div.append(text, meta, accept, again);
      root.appendChild(div);
    });
  }

  /** Highlighted marker ranges, for tests and debugging. */
  markers(): ReturnType<typeof markerRanges> {
    return markerRanges(this.doc);
  }
}

export function createEditorApp(els: EditorElements, options: EditorOptions = {}): EditorApp {
  return new EditorApp(els, options);
}

export { emptyDoc };
