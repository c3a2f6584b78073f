import { createEditorApp, type EditorElements } from "./editor.js";

function requireEl<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
}

const els: EditorElements = {
  editor: requireEl("editor"),
  panel: requireEl("entity-panel"),
  suggestions: requireEl("suggestions"),
  status: requireEl("status"),
  genre: requireEl<HTMLSelectElement>("genre"),
  size: requireEl<HTMLSelectElement>("size"),
  generateButton: requireEl("generate"),
};

const app = createEditorApp(els);

const healthEl = document.getElementById("health");
if (healthEl) {
  app.api
    .health()
    .then((h) => {
      healthEl.textContent = `server ok · model ${h.model_checksum?.slice(0, 8) ?? "none"}`;
    })
    .catch(() => {
      healthEl.textContent = "server unreachable";
    });
}
