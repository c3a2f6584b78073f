"""HTTP service: on-the-fly NER and controlled generation behind a JSON
API, with an optional master/compute split.

Single-binary mode (the default) answers /api/ner and /api/generate
in-process. With a nodes file the app becomes a master: it serves static
assets and round-robins API calls to healthy compute nodes by role.
Responses are deterministic given the request seed; suggestion seeds are
returned so clients can regenerate reproducibly.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal

import httpx
import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import assembly
from .annotate import extract_entities
from .corpus import SizeClass
from .decode import DecodeParams, generate_paragraph
from .errors import DataError
from .model import checkpoint_file_hash, load_checkpoint
from .tokenizer import Vocab

log = logging.getLogger(__name__)

DEFAULT_REQUEST_LIMIT = 64 * 1024
HEALTH_TTL_SECONDS = 5.0


@dataclass
class ServiceSettings:
    model_path: str | None = None
    vocab_path: str | None = None
    nodes_file: str | None = None
    gazetteer_path: str | None = None
    webui_dir: str | None = None
    cors_origin: str = "*"
    request_limit: int = DEFAULT_REQUEST_LIMIT

    @classmethod
    def from_env(cls, **overrides) -> "ServiceSettings":
        settings = cls(
            model_path=os.environ.get("MODEL_PATH"),
            vocab_path=os.environ.get("VOCAB_PATH"),
            nodes_file=os.environ.get("NODES_FILE"),
            gazetteer_path=os.environ.get("GAZETTEER_PATH"),
            webui_dir=os.environ.get("WEBUI_DIR"),
        )
        for key, value in overrides.items():
            if value is not None:
                setattr(settings, key, value)
        return settings


@dataclass
class ComputeNode:
    id: str
    role: Literal["ner", "generate"]
    base_url: str
    healthy: bool = True
    last_probe: float = 0.0


class NodePool:
    """Round-robin dispatch over healthy compute nodes of a given role."""

    def __init__(
        self,
        nodes: list[ComputeNode],
        client_factory: Callable[[str], httpx.AsyncClient] | None = None,
    ):
        self.nodes = nodes
        self._cursor: dict[str, int] = {}
        self._factory = client_factory or (
            lambda base_url: httpx.AsyncClient(base_url=base_url, timeout=30.0)
        )
        self._clients: dict[str, httpx.AsyncClient] = {}

    def _client(self, node: ComputeNode) -> httpx.AsyncClient:
        if node.base_url not in self._clients:
            self._clients[node.base_url] = self._factory(node.base_url)
        return self._clients[node.base_url]

    async def _probe(self, node: ComputeNode) -> None:
        try:
            response = await self._client(node).get("/health")
            node.healthy = response.status_code == 200
        except httpx.HTTPError:
            node.healthy = False
        node.last_probe = time.monotonic()

    async def dispatch(self, role: str, path: str, body: dict) -> tuple[int, dict]:
        """POST to the next healthy node of the role; fail over down the
        ring; 503 when none are healthy."""
        ring = [n for n in self.nodes if n.role == role]
        if not ring:
            return 503, {"detail": f"no {role} nodes configured"}
        start = self._cursor.get(role, 0)
        now = time.monotonic()
        for attempt in range(len(ring)):
            node = ring[(start + attempt) % len(ring)]
            if not node.healthy and now - node.last_probe > HEALTH_TTL_SECONDS:
                await self._probe(node)
            if not node.healthy:
                continue
            try:
                response = await self._client(node).post(path, json=body)
            except httpx.HTTPError as exc:
                log.warning("node %s failed: %s", node.id, exc)
                node.healthy = False
                node.last_probe = time.monotonic()
                continue
            self._cursor[role] = (start + attempt + 1) % len(ring)
            return response.status_code, response.json()
        return 503, {"detail": f"no healthy {role} node"}

    async def health_snapshot(self) -> list[dict]:
        rows = []
        for node in self.nodes:
            await self._probe(node)
            rows.append({"id": node.id, "role": node.role, "healthy": node.healthy})
        return rows


def load_node_pool(
    path: str | Path, client_factory: Callable[[str], httpx.AsyncClient] | None = None
) -> NodePool:
    with open(path, encoding="utf-8") as fh:
        spec = json.load(fh)
    nodes = [
        ComputeNode(
            id=str(n.get("id", f"node{i}")), role=n["role"], base_url=n["url"].rstrip("/")
        )
        for i, n in enumerate(spec["nodes"])
    ]
    return NodePool(nodes, client_factory)


class NerRequest(BaseModel):
    text: str = ""


class GenerationRequest(BaseModel):
    p1: str = ""
    p3: str = ""
    genre: str = ""
    size: Literal["S", "M", "L"] = "M"
    entities: dict[str, list[str]] = Field(default_factory=dict)
    summary: str | list[str] = ""
    decode: dict = Field(default_factory=dict)
    n_suggestions: int = Field(default=3, ge=1, le=5)


def _decode_defaults(stats: dict | None, size: str, block_size: int) -> tuple[int, int]:
    """Per-size-class length bounds from corpus statistics."""
    if stats and stats.get(size, {}).get("count", 0) > 0:
        row = stats[size]
        return max(1, int(row["p5"])), max(2, int(row["p95"]))
    return 8, max(16, block_size // 2)


def create_app(
    settings: ServiceSettings | None = None,
    client_factory: Callable[[str], httpx.AsyncClient] | None = None,
) -> FastAPI:
    settings = settings or ServiceSettings.from_env()
    app = FastAPI(title="parafill", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[settings.cors_origin],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    state = app.state
    state.settings = settings
    state.started = time.monotonic()
    state.vocab = None
    state.model = None
    state.stats = None
    state.model_checksum = None
    state.vocab_checksum = None
    state.gazetteer = {}
    state.pool = None

    if settings.vocab_path:
        state.vocab = Vocab.load(settings.vocab_path)
        state.vocab_checksum = state.vocab.content_hash()
        stats_path = Path(settings.vocab_path) / "stats.json"
        if stats_path.exists():
            with open(stats_path, encoding="utf-8") as fh:
                state.stats = json.load(fh).get("p2_token_length")
    if settings.model_path:
        model, _, _ = load_checkpoint(settings.model_path, expected_vocab_hash=state.vocab_checksum)
        state.model = model
        state.model_checksum = checkpoint_file_hash(settings.model_path)
    if settings.gazetteer_path:
        with open(settings.gazetteer_path, encoding="utf-8") as fh:
            state.gazetteer = json.load(fh)
    if settings.nodes_file:
        state.pool = load_node_pool(settings.nodes_file, client_factory)
    state.role = "master" if state.pool else "all"

    @app.middleware("http")
    async def limit_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > settings.request_limit:
            return JSONResponse(
                {"detail": f"request body exceeds {settings.request_limit} bytes"},
                status_code=413,
            )
        return await call_next(request)

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse({"detail": str(exc.errors())}, status_code=400)

    @app.get("/health")
    async def health():
        body = {
            "role": state.role,
            "model_checksum": state.model_checksum,
            "vocab_checksum": state.vocab_checksum,
            "uptime": time.monotonic() - state.started,
        }
        if state.pool:
            body["nodes"] = await state.pool.health_snapshot()
        return body

    @app.post("/api/ner")
    async def ner(request: NerRequest):
        if state.pool:
            status, body = await state.pool.dispatch("ner", "/api/ner", request.model_dump())
            return JSONResponse(body, status_code=status)
        entities = extract_entities(request.text, state.gazetteer)
        return {"entities": entities.as_dict()}

    @app.post("/api/generate")
    async def generate_endpoint(request: GenerationRequest):
        if state.pool:
            status, body = await state.pool.dispatch(
                "generate", "/api/generate", request.model_dump()
            )
            return JSONResponse(body, status_code=status)
        if state.model is None or state.vocab is None:
            return JSONResponse({"detail": "model not ready"}, status_code=503)
        started = time.perf_counter()
        vocab = state.vocab
        block_size = state.model.config.block_size
        min_len, max_len = _decode_defaults(state.stats, request.size, block_size)
        overrides = dict(request.decode)
        base_seed = overrides.pop("seed", None)
        if base_seed is None:
            base_seed = int(np.random.SeedSequence().generate_state(1)[0])
        fields = {
            "strategy": "sample",
            "top_p": 0.9,
            "min_length": min_len,
            "max_length": max_len,
        }
        unknown = set(overrides) - set(DecodeParams.__dataclass_fields__)
        if unknown:
            return JSONResponse(
                {"detail": f"unknown decode parameters: {sorted(unknown)}"}, status_code=400
            )
        fields.update(overrides)
        try:
            params = DecodeParams(**fields)
        except DataError as exc:
            return JSONResponse({"detail": str(exc)}, status_code=400)
        summary = (
            ", ".join(request.summary) if isinstance(request.summary, list) else request.summary
        )
        section = {
            "p1": assembly.section_tokens(vocab, request.p1),
            "p3": assembly.section_tokens(vocab, request.p3),
            "summary": assembly.section_tokens(vocab, summary),
            "theme": assembly.section_tokens(vocab, request.genre),
            "entities": assembly.section_tokens(
                vocab, assembly.entities_text(request.entities)
            ),
        }
        try:
            prefix = assembly.build_generation_prefix(
                vocab,
                p1=section["p1"],
                p3=section["p3"],
                summary=section["summary"],
                theme=section["theme"],
                entities=section["entities"],
                size=SizeClass(request.size),
                block_size=block_size,
                reserve=params.max_length + 1,
            )
        except DataError as exc:
            return JSONResponse(
                {
                    "detail": str(exc),
                    "token_counts": {k: len(v) for k, v in section.items()},
                    "block_size": block_size,
                    "reserve": params.max_length + 1,
                },
                status_code=422,
            )
        suggestions = []
        for k in range(request.n_suggestions):
            # Suggestion 0 uses the request seed verbatim so posting a
            # returned seed back regenerates that exact suggestion.
            if k == 0:
                seed_k = int(base_seed)
            else:
                seed_k = int(np.random.SeedSequence([base_seed, k]).generate_state(1)[0])
            result = generate_paragraph(state.model, vocab, prefix, params.replace(seed=seed_k))
            suggestions.append(
                {"text": result.text, "stop_reason": result.stop_reason, "seed": seed_k}
            )
        return {
            "suggestions": suggestions,
            "timing_ms": (time.perf_counter() - started) * 1000.0,
        }

    if settings.webui_dir and Path(settings.webui_dir).is_dir():
        app.mount("/", StaticFiles(directory=settings.webui_dir, html=True), name="webui")

    return app
