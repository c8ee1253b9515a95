"""Thin HTTP client for the broker API, shared by publishers, platforms, devices and auditors."""

from __future__ import annotations

from typing import Any

import httpx

from aegon.errors import AegonError


class BrokerError(AegonError):
    """The broker answered with an error document."""

    def __init__(self, status: int, code: str, message: str = ""):
        super().__init__(message or code, code)
        self.status = status


class BrokerClient:
    """``http`` may be any httpx.Client, including Starlette's in-process TestClient."""

    def __init__(self, http: httpx.Client, base_url: str = ""):
        self.http = http
        self.base_url = base_url.rstrip("/")
        self.calls = 0

    def _request(self, method: str, path: str, **kwargs: Any) -> Any:
        self.calls += 1
        response = self.http.request(method, self.base_url + path, **kwargs)
        if response.status_code >= 400:
            try:
                doc = response.json()
                code, message = doc.get("error_code", "error"), doc.get("message", "")
            except ValueError:
                code, message = "error", response.text
            raise BrokerError(response.status_code, code, message)
        return response.json()

    def get(self, path: str, **params: Any) -> Any:
        params = {k: v for k, v in params.items() if v is not None}
        return self._request("GET", path, params=params)

    def post(self, path: str, body: Any) -> Any:
        return self._request("POST", path, json=body)

    def jwks(self) -> dict:
        return self.get("/.well-known/jwks.json")

    def request_license(self, **request: Any) -> dict:
        return self.post("/v1/licenses", request)

    def report_content_hash(self, body: dict) -> dict:
        return self.post("/v1/content-hash", body)

    def post_provenance(self, event: dict) -> dict:
        return self.post("/v1/provenance", event)

    def register_platform(self, platform_id: str, public_jwk: dict) -> dict:
        return self.post("/v1/platforms", {"platform_id": platform_id, "public_jwk": public_jwk})

    def device_challenge(self) -> dict:
        return self.get("/v1/devices/challenge")

    def register_device(self, chain: list[str], challenge: str) -> dict:
        return self.post("/v1/devices", {"chain": chain, "challenge": challenge})

    def revoke_device(self, device_id: str) -> dict:
        return self.post(f"/v1/devices/{device_id}/revoke", {})

    def submit_receipts(self, receipts: list[str]) -> list[dict]:
        return self.post("/v1/receipts", receipts)

    def sth(self) -> dict:
        return self.get("/v1/sth")

    def sth_history(self) -> list[dict]:
        return self.get("/v1/sth/history")

    def publish_sth(self) -> dict:
        return self.post("/v1/admin/sth", {})

    def proof(self, txn_id: str | None = None, tree_size: int | None = None,
              leaf_index: int | None = None) -> dict:
        return self.get("/v1/proof", txn_id=txn_id, tree_size=tree_size, leaf_index=leaf_index)

    def consistency(self, old: int, new: int) -> dict:
        return self.get("/v1/consistency", old=old, new=new)

    def entries(self, txn_id: str) -> dict:
        return self.get(f"/v1/entries/{txn_id}")
