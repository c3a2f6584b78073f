/**
 * Deterministic in-memory stand-in for the generation service, faithful to
 * its contract: NER finds capitalized non-sentence-initial words,
 * suggestion 0 reuses the request seed verbatim, identical seeds give
 * identical text.
 */

import type { EntitySets, GenerationRequest } from "../src/types.js";

export function fakeNer(text: string): EntitySets {
  const out: EntitySets = { persons: [], locations: [], organisations: [], misc: [] };
  for (const sentence of text.split(/(?<=[.!?])\s+/)) {
    const words = sentence.match(/[A-Za-z][A-Za-z'-]*/g) ?? [];
    words.slice(1).forEach((word) => {
      if (/^[A-Z]/.test(word) && word !== "I" && !out.misc.includes(word)) {
        out.misc.push(word);
      }
    });
  }
  return out;
}

function textForSeed(request: GenerationRequest, seed: number): string {
  const summary = Array.isArray(request.summary)
    ? request.summary.join(", ")
    : request.summary;
  return `Generated[${seed}|${request.size}] ${summary || "blank"} :: ${request.p1.slice(0, 12)}`;
}

export function installFakeServer(options: { failNer?: boolean } = {}): {
  calls: { ner: number; generate: number };
} {
  const calls = { ner: 0, generate: 0 };
  globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    const body = init?.body ? JSON.parse(String(init.body)) : {};
    if (url.endsWith("/api/ner")) {
      calls.ner += 1;
      if (options.failNer) throw new TypeError("network down");
      return new Response(JSON.stringify({ entities: fakeNer(body.text ?? "") }), {
        status: 200,
        headers: { "content-type": "application/json" },
      });
    }
    if (url.endsWith("/api/generate")) {
      calls.generate += 1;
      const request = body as GenerationRequest;
      if ((request.summary?.length ?? 0) > 500) {
        return new Response(
          JSON.stringify({ detail: "context too large", token_counts: { summary: 999 } }),
          { status: 422 },
        );
      }
      const base = request.decode?.seed ?? 1234;
      const n = request.n_suggestions ?? 3;
      const suggestions = Array.from({ length: n }, (_, k) => {
        const seed = k === 0 ? base : base * 31 + k;
        return { text: textForSeed(request, seed), stop_reason: "eos", seed };
      });
      return new Response(JSON.stringify({ suggestions, timing_ms: 1.0 }), { status: 200 });
    }
    if (url.endsWith("/health")) {
      return new Response(
        JSON.stringify({ role: "all", model_checksum: "abc", vocab_checksum: "def", uptime: 1 }),
        { status: 200 },
      );
    }
    return new Response("not found", { status: 404 });
  }) as typeof fetch;
  return { calls };
}
