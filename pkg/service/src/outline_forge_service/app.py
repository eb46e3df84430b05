"""FastAPI application exposing the inpainting and extraction endpoints.

Protocol (shared with the augmentation tool's backend client):

    GET  /v1/health      -> {"status": "ok", "model": str}
    POST /v1/inpaint     -> {"image_png_b64": str, "backend_id": str}
    POST /v1/features    -> FEAT binary (application/octet-stream)
    POST /v1/embeddings  -> {"version": 1, "pairs": [...]}

Schema violations answer 400 naming the offending field, oversized bodies
413, and queue overflow 503; there are no silent drops.
"""

from __future__ import annotations

import asyncio
import base64
import binascii
import json
import threading
from io import BytesIO

import numpy as np
import PIL.Image
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .config import ServiceConfig
from .engines import create_engine
from .featfile import feature_bytes
from .features import create_embedder, create_extractor


class _Admission:
    """Bounded running + queued job counter; overflow degrades to 503."""

    def __init__(self, max_concurrent: int, queue_depth: int):
        self.limit = max_concurrent + queue_depth
        self.semaphore = asyncio.Semaphore(max_concurrent)
        self.lock = threading.Lock()
        self.admitted = 0

    def try_enter(self) -> bool:
        with self.lock:
            if self.admitted >= self.limit:
                return False
            self.admitted += 1
            return True

    def leave(self) -> None:
        with self.lock:
            self.admitted -= 1


class SchemaError(Exception):
    pass


def _decode_png_value(value, field: str, mode: str) -> np.ndarray:
    if not isinstance(value, str):
        raise SchemaError(f"missing or non-string field '{field}'")
    try:
        raw = base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise SchemaError(f"field '{field}' is not valid base64: {exc}") from exc
    try:
        with PIL.Image.open(BytesIO(raw)) as pil:
            return np.asarray(pil.convert(mode))
    except Exception as exc:
        raise SchemaError(f"field '{field}' is not a decodable PNG: {exc}") from exc


def _decode_png_field(body: dict, field: str, expect: tuple[int, int], mode: str) -> np.ndarray:
    arr = _decode_png_value(body.get(field), field, mode)
    if (arr.shape[1], arr.shape[0]) != expect:
        raise SchemaError(
            f"field '{field}' must be {expect[0]}x{expect[1]}, "
            f"got {arr.shape[1]}x{arr.shape[0]}"
        )
    return arr


def _require_type(body: dict, field: str, types, default=None):
    if field not in body:
        if default is not None:
            return default
        raise SchemaError(f"missing field '{field}'")
    value = body[field]
    if isinstance(value, bool) or not isinstance(value, types):
        raise SchemaError(f"field '{field}' has the wrong type")
    return value


def _png_b64(arr: np.ndarray) -> str:
    buf = BytesIO()
    PIL.Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(
    config: ServiceConfig | None = None,
    engine=None,
    extractor=None,
    embedder=None,
) -> FastAPI:
    """Build the service; the engine/extractor overrides exist for tests."""
    config = config or ServiceConfig()
    engine = engine or create_engine(config)
    extractor = extractor or create_extractor(config.feature_extractor)
    embedder = embedder or create_embedder(config.embedding_model)
    admission = _Admission(config.max_concurrent_jobs, config.queue_depth)

    app = FastAPI(title="outline-forge inference service")

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": message})

    async def read_json_body(request: Request) -> dict:
        raw = await request.body()
        if len(raw) > config.max_request_bytes:
            raise SchemaError("__oversize__")
        try:
            body = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"request body is not valid JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise SchemaError("request body must be a JSON object")
        return body

    @app.get("/v1/health")
    async def health():
        return {
            "status": "ok",
            "model": engine.engine_id,
            "feature_extractor": extractor.extractor_id,
            "embedding_model": embedder.embedder_id,
        }

    @app.post("/v1/inpaint")
    async def inpaint(request: Request):
        try:
            body = await read_json_body(request)
            image = _decode_png_field(body, "image_png_b64", config.work_resolution, "RGB")
            mask_arr = _decode_png_field(body, "mask_png_b64", config.work_resolution, "L")
            prompt = _require_type(body, "prompt", str)
            negative = _require_type(body, "negative_prompt", str, default="")
            seed = _require_type(body, "seed", int)
            steps = _require_type(body, "steps", int, default=50)
            guidance = _require_type(body, "guidance_scale", (int, float), default=7.5)
            mask = mask_arr != 0
            if not mask.any():
                raise SchemaError("field 'mask_png_b64' has no pixels to inpaint")
        except SchemaError as exc:
            if str(exc) == "__oversize__":
                return error(413, "request body too large")
            return error(400, str(exc))

        if not admission.try_enter():
            return error(503, "busy: job queue is full")
        try:
            loop = asyncio.get_running_loop()
            async with admission.semaphore:
                result = await loop.run_in_executor(
                    None,
                    lambda: engine.inpaint(
                        image, mask, prompt, negative, int(seed), int(steps), float(guidance)
                    ),
                )
        finally:
            admission.leave()
        return {"image_png_b64": _png_b64(result), "backend_id": engine.engine_id}

    @app.post("/v1/features")
    async def features(request: Request):
        try:
            body = await read_json_body(request)
            items = body.get("images_png_b64")
            if not isinstance(items, list) or not items:
                raise SchemaError("missing or empty field 'images_png_b64'")
            images = [_decode_png_value(v, "images_png_b64", "RGB") for v in items]
        except SchemaError as exc:
            if str(exc) == "__oversize__":
                return error(413, "request body too large")
            return error(400, str(exc))
        rows = extractor.extract_batch(images)
        return Response(content=feature_bytes(rows), media_type="application/octet-stream")

    @app.post("/v1/embeddings")
    async def embeddings(request: Request):
        try:
            body = await read_json_body(request)
            items = body.get("items")
            if not isinstance(items, list) or not items:
                raise SchemaError("missing or empty field 'items'")
            pairs = []
            for entry in items:
                if not isinstance(entry, dict):
                    raise SchemaError("entries of 'items' must be objects")
                caption = _require_type(entry, "caption", str)
                image = _decode_png_value(entry.get("image_png_b64"), "image_png_b64", "RGB")
                pairs.append(
                    {
                        "image_embedding": embedder.embed_image(image).tolist(),
                        "text_embedding": embedder.embed_text(caption).tolist(),
                        "caption": caption,
                    }
                )
        except SchemaError as exc:
            if str(exc) == "__oversize__":
                return error(413, "request body too large")
            return error(400, str(exc))
        return {"version": 1, "pairs": pairs}

    return app
