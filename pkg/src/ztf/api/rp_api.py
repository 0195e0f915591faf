"""HTTP surface of a relying party.

/resource/* is the enforcement point: the caller presents an identity
token plus request metadata headers and gets the decision (the protected
application behind it is a stub echo). /ctx-recv is the push delivery
endpoint for context event tokens.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from ..rp import AccessRequest, RelyingParty
from .common import bearer_token, install_error_handlers
from .schemas import AcquireRequest, RegisterCtxIdRequest


def create_rp_app(rp: RelyingParty) -> FastAPI:
    app = FastAPI(title=f"relying party {rp.uri}")
    install_error_handlers(app)

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "role": "rp", "uri": rp.uri}

    @app.get("/resource/{path:path}")
    def protected_resource(path: str, request: Request):
        req = AccessRequest(
            identity_token=bearer_token(request),
            source_ip=request.headers.get("X-Source-Ip", "0.0.0.0"),
            device_cn=request.headers.get("X-Device-Cn"),
            resource_path=f"/{path}",
        )
        decision = rp.handle_access(req)
        body = {
            "decision": decision.effect,
            "rule": decision.rule,
            "trace": decision.trace,
        }
        if decision.allowed:
            body["echo"] = f"resource /{path} served"
            return body
        return JSONResponse(status_code=403, content=body)

    @app.post("/register-ctx-id")
    def register_ctx_id(body: RegisterCtxIdRequest, request: Request):
        req = AccessRequest(
            identity_token=bearer_token(request), source_ip="registration"
        )
        claims, detail = rp.pip_get_identity(req)
        if claims is None:
            raise HTTPException(
                status_code=401, detail=f"identify first: {detail['reason']}"
            )
        ctx_id = rp.register_ctx_id(claims["sub"], body.cap, body.ctx_id)
        return {"user": claims["sub"], "cap": body.cap, "ctx_id": ctx_id}

    @app.post("/acquire")
    def acquire(body: AcquireRequest):
        result = rp.acquire_context_access(
            body.user, body.cap, body.ctx_type, set(body.scopes)
        )
        return {
            "denied": result.denied,
            "reason": result.reason,
            "grants": result.grants,
            "rpt": result.rpt,
            "trace": result.trace,
        }

    @app.post("/ctx-recv")
    async def ctx_recv(request: Request):
        token = (await request.body()).decode("ascii")
        result = rp.receive_push(token)
        if not result["accepted"] and result["reason"] != "duplicate":
            return JSONResponse(status_code=400, content=result)
        return result

    @app.get("/delivery-log")
    def delivery_log():
        return {"entries": rp.delivery_log}

    @app.get("/decision-log")
    def decision_log():
        return {"entries": rp.decision_log}

    @app.get("/flow-traces")
    def flow_traces():
        return {"traces": rp.flow_traces}

    return app
