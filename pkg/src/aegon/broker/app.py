"""HTTP surface of the broker (FastAPI). Errors are ``{error_code, message}`` documents."""

from __future__ import annotations

import logging
from typing import Any

from fastapi import Body, FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from aegon.broker.core import Broker
from aegon.errors import (
    AegonError,
    ConflictError,
    KeyUnavailableError,
    NotFoundError,
    OutOfRangeError,
    Rejected,
    ReplayError,
)

logger = logging.getLogger(__name__)


def _status_for(exc: AegonError) -> int:
    if isinstance(exc, NotFoundError):
        return 404
    if isinstance(exc, (ConflictError, ReplayError)):
        return 409
    if isinstance(exc, Rejected):
        return 401 if exc.reason == "unauthorized" else 422
    if isinstance(exc, KeyUnavailableError):
        return 503
    if isinstance(exc, OutOfRangeError):
        return 409 if exc.code == "not_committed" else 400
    return 400


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error_code": code, "message": message})


def create_app(broker: Broker, admin_token: str | None = None) -> FastAPI:
    app = FastAPI(title="Aegon broker", version="1.0")
    app.state.broker = broker

    @app.exception_handler(AegonError)
    async def _aegon_error(request: Request, exc: AegonError) -> JSONResponse:
        code = exc.reason if isinstance(exc, Rejected) else exc.code
        return _error(_status_for(exc), code, str(exc))

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        return _error(400, "validation_error", str(exc.errors()))

    def _require_admin(authorization: str | None) -> None:
        if admin_token is not None and authorization != f"Bearer {admin_token}":
            raise Rejected("unauthorized", "admin token required")

    @app.post("/v1/licenses")
    def issue_license(body: dict = Body(...)) -> dict:
        return broker.issue_license(body)

    @app.post("/v1/content-hash")
    def content_hash(body: dict = Body(...)) -> dict:
        return broker.report_content_hash(body)

    @app.post("/v1/provenance")
    def provenance(body: dict = Body(...)) -> dict:
        return broker.record_provenance(body)

    @app.get("/v1/provenance/{txn_id}")
    def provenance_chain(txn_id: str) -> dict:
        return broker.provenance_chain(txn_id)

    @app.post("/v1/platforms")
    def register_platform(body: dict = Body(...)) -> dict:
        return broker.register_platform(body.get("platform_id"), body.get("public_jwk"))

    @app.get("/v1/devices/challenge")
    def device_challenge() -> dict:
        return broker.device_challenge()

    @app.post("/v1/devices")
    def register_device(body: dict = Body(...)) -> dict:
        return broker.register_device(body)

    @app.post("/v1/devices/{device_id}/revoke")
    def revoke_device(device_id: str, authorization: str | None = Header(None)) -> dict:
        _require_admin(authorization)
        return broker.revoke_device(device_id)

    @app.post("/v1/receipts")
    def receipts(body: list[Any] = Body(...)) -> list[dict]:
        return broker.submit_receipts(body)

    @app.get("/.well-known/jwks.json")
    def jwks() -> dict:
        return broker.jwks()

    @app.get("/v1/sth")
    def sth() -> dict:
        return broker.sth()

    @app.get("/v1/sth/history")
    def sth_history() -> list[dict]:
        return broker.sth_history()

    @app.get("/v1/proof")
    def proof(txn_id: str | None = None, tree_size: int | None = None,
              leaf_index: int | None = None) -> dict:
        return broker.proof(txn_id=txn_id, tree_size=tree_size, leaf_index=leaf_index)

    @app.get("/v1/consistency")
    def consistency(old: int, new: int) -> dict:
        return broker.consistency(old, new)

    @app.get("/v1/entries/{txn_id}")
    def entries(txn_id: str) -> dict:
        return broker.entries(txn_id)

    @app.get("/v1/leaves/{leaf_index}")
    def leaf(leaf_index: int) -> dict:
        return broker.entry_at(leaf_index)

    @app.post("/v1/admin/sth")
    def publish_sth(authorization: str | None = Header(None)) -> dict:
        _require_admin(authorization)
        return broker.publish_sth()

    @app.get("/v1/admin/spot-checks")
    def spot_checks(authorization: str | None = Header(None)) -> list[dict]:
        _require_admin(authorization)
        return broker.spot_checks()

    @app.get("/v1/admin/publisher-health")
    def publisher_health(authorization: str | None = Header(None)) -> list[dict]:
        _require_admin(authorization)
        return broker.publisher_health()

    return app
