"""HTTP surface of the identity-provider stub (hosts several issuers)."""

from __future__ import annotations

from fastapi import FastAPI

from ..idp import IdentityProvider
from .common import install_error_handlers
from .schemas import CompromiseRequest, IdTokenRequest


def create_idp_app(idp: IdentityProvider) -> FastAPI:
    app = FastAPI(title="identity providers")
    install_error_handlers(app)

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "role": "idp", "issuers": sorted(idp.issuers)}

    @app.post("/token")
    def token(body: IdTokenRequest):
        issued = idp.authenticate_and_issue(
            body.issuer, body.user, body.credential, body.audience
        )
        return {"token": issued}

    @app.post("/compromise")
    def compromise(body: CompromiseRequest):
        idp.set_compromised(body.issuer, body.flag)
        return {"issuer": body.issuer, "compromised": idp.is_compromised(body.issuer)}

    return app
