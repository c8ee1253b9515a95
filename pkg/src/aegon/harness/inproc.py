"""In-process ASGI client used by the harness actors."""

import warnings

with warnings.catch_warnings():
    # Starlette nags about its httpx-based TestClient; the API is what we want here.
    warnings.filterwarnings("ignore", message="Using `httpx` with `starlette.testclient`")
    from fastapi.testclient import TestClient

__all__ = ["TestClient"]
