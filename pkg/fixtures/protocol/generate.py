"""Regenerate the shared wire-protocol golden fixtures.

Run from the repository root with both packages installed:

    python fixtures/protocol/generate.py

The request fixture is a fully deterministic inpaint job (gradient test
image, centered square mask, steps=2 so the CPU smoke path stays fast). The
response fixture is the procedural engine's answer to it. Both test suites
load these files: the client asserts its encoder produces an equivalent
request and can parse the response; the service asserts it accepts the
request and answers in kind.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent


def golden_image() -> np.ndarray:
    xs = np.arange(512)
    ys = np.arange(512)
    r = np.broadcast_to((xs % 256).astype(np.uint8), (512, 512))
    g = np.broadcast_to((ys[:, None] % 256).astype(np.uint8), (512, 512))
    b = ((xs[None, :] + ys[:, None]) % 256).astype(np.uint8)
    return np.stack([r, g, b], axis=2).copy()


def golden_mask() -> np.ndarray:
    mask = np.zeros((512, 512), dtype=bool)
    mask[192:320, 192:320] = True
    return mask


def main() -> None:
    from outline_forge.backend import InpaintJob, encode_job
    from outline_forge.image import Image
    from outline_forge.mask import BinaryMask
    from outline_forge.prompts import build_prompt
    from outline_forge_service.app import create_app
    from outline_forge_service.config import ServiceConfig
    from fastapi.testclient import TestClient

    job = InpaintJob(
        image=Image(golden_image()),
        mask=BinaryMask(golden_mask()),
        prompt=build_prompt("bus", 1),
        seed=1234,
        steps=2,
        guidance_scale=7.5,
    )
    request_body = encode_job(job)
    (HERE / "inpaint_request.json").write_text(json.dumps(request_body, indent=1))

    client = TestClient(create_app(ServiceConfig(engine="procedural")))
    response = client.post("/v1/inpaint", json=request_body)
    response.raise_for_status()
    (HERE / "inpaint_response.json").write_text(json.dumps(response.json(), indent=1))
    print("wrote", HERE / "inpaint_request.json")
    print("wrote", HERE / "inpaint_response.json")


if __name__ == "__main__":
    main()
