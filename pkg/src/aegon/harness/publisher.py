"""In-harness toy publisher: an ASGI site gated by the edge validator.

It serves a few fixture articles. Requests carrying the broker's spot-check
credential bypass the token gate; ``divergent`` lets a test make the site
show the broker different bytes than it shows licensed platforms.
"""

from __future__ import annotations

import logging
import random
from collections.abc import Callable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from aegon.client import BrokerClient
from aegon.edge import ContentHashReporter, EdgeValidator, JtiRegistry, JwksCache
from aegon.harness.inproc import TestClient

logger = logging.getLogger(__name__)

ARTICLES: dict[str, bytes] = {
    "/articles/licensing-for-machines": (
        b"<article><h1>Licensing for machines</h1>"
        b"<p>Publishers can now price automated access per request.</p></article>"
    ),
    "/articles/harbor-report": (
        b"<article><h1>Harbor report</h1>"
        b"<p>Container volumes rose for the third straight month.</p></article>"
    ),
    "/articles/city-budget": (
        b"<article><h1>City budget</h1>"
        b"<p>The council approved the transit levy after a late amendment.</p></article>"
    ),
}

SPOT_CHECK_HEADER = "Aegon-Spot-Check"


class ToyPublisher:
    def __init__(
        self,
        domain: str,
        report_client: BrokerClient,
        jwks_fetch: Callable[[], dict],
        clock: Callable[[], float],
        sleep: Callable[[float], None],
        rng: random.Random,
        articles: dict[str, bytes] | None = None,
    ):
        self.domain = domain
        self.base_url = f"https://{domain}"
        self.articles = dict(ARTICLES if articles is None else articles)
        self.divergent: dict[str, bytes] = {}
        self.spot_check_secret = rng.randbytes(16).hex()
        self.jwks_cache = JwksCache(fetch=jwks_fetch)
        self.edge = EdgeValidator(domain, self.jwks_cache, JtiRegistry(), clock)
        self.reporter = ContentHashReporter(report_client, domain, clock=clock, sleep=sleep, rng=rng)
        self.denials: list[tuple[str, str]] = []
        self.app = self._build_app()
        self.http = TestClient(self.app, base_url=self.base_url)

    def url(self, path: str) -> str:
        return self.base_url + path

    def _build_app(self) -> FastAPI:
        app = FastAPI(title=f"toy publisher {self.domain}")

        @app.get("/articles/{slug}")
        def article(slug: str, request: Request) -> Response:
            path = f"/articles/{slug}"
            if path not in self.articles:
                return JSONResponse({"error": "not_found"}, status_code=404)
            if request.headers.get(SPOT_CHECK_HEADER) == self.spot_check_secret:
                return Response(self.divergent.get(path, self.articles[path]), media_type="text/html")
            decision = self.edge.gate_request(request.headers.get("authorization"), self.url(path))
            if not decision.allowed:
                self.denials.append((path, decision.reason))
                status = 401 if decision.reason in ("missing_token", "jwks_unavailable") else 403
                return JSONResponse({"error": decision.reason}, status_code=status)
            body = self.articles[path]
            self.reporter.report_content_hash(decision.txn_id, body)
            return Response(body, media_type="text/html", headers=decision.headers)

        return app

    def broker_fetch(self, url: str) -> bytes:
        """Content fetcher handed to the broker for spot-checks."""
        response = self.http.get(url, headers={SPOT_CHECK_HEADER: self.spot_check_secret})
        response.raise_for_status()
        return response.content
