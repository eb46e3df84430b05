"""Run the inference service: python -m outline_forge_service"""

from __future__ import annotations

import argparse

import uvicorn

from .app import create_app
from .config import DEFAULT_MODEL_ID, ServiceConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="outline-forge-service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument(
        "--engine",
        choices=["auto", "procedural", "diffusers"],
        default="auto",
        help="auto tries the diffusion checkpoint, then falls back",
    )
    parser.add_argument("--model-id", default=DEFAULT_MODEL_ID)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-concurrent", type=int, default=1)
    parser.add_argument("--queue-depth", type=int, default=8)
    args = parser.parse_args(argv)

    config = ServiceConfig(
        engine=args.engine,
        model_id=args.model_id,
        device=args.device,
        max_concurrent_jobs=args.max_concurrent,
        queue_depth=args.queue_depth,
    )
    uvicorn.run(create_app(config), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
