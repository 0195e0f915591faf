"""HTTP surface of the authorization server.

Protection API calls (resource registration, permission tickets)
authenticate with the PAT bearer; grant requests authenticate the
requesting party with its federation entity credential; owner-facing
views use a bearer session obtained via /login.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from ..authz import AuthorizationServer, ClaimsDocument, GrantDenied
from ..model import ContextType, Scope
from .common import bearer_token, install_error_handlers, require_header_credential
from .schemas import (
    ConsentResponseRequest,
    IntrospectRequest,
    LoginRequest,
    PatRequest,
    PermissionRequest,
    PolicyRuleRequest,
    RegisterResourceRequest,
    TokenRequest,
)


def create_authz_app(
    server: AuthorizationServer,
    *,
    user_accounts: dict[str, str],
    entity_secrets: dict[str, str],
    static_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="user authorization server")
    install_error_handlers(app)
    sessions: dict[str, str] = {}

    def entity(request: Request) -> str:
        return require_header_credential(
            request, "X-Entity", "X-Entity-Secret", entity_secrets
        )

    def owner(request: Request) -> str:
        token = bearer_token(request)
        email = sessions.get(token or "")
        if email is None:
            raise HTTPException(status_code=401, detail="login required")
        return email

    def pat_record(request: Request):
        token = bearer_token(request)
        if token is None:
            raise HTTPException(status_code=401, detail="protection token required")
        return server.validate_pat(token)

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "role": "authz"}

    @app.post("/login")
    def login(body: LoginRequest):
        if user_accounts.get(body.user) != body.secret:
            raise HTTPException(status_code=401, detail="bad user credential")
        token = server.ids.new_secret("session")
        sessions[token] = body.user
        return {"session": token, "user": body.user}

    @app.post("/pat")
    def issue_pat(body: PatRequest, caller: str = Depends(entity)):
        if caller != body.cap:
            raise HTTPException(
                status_code=403, detail="entity may only request its own tokens"
            )
        record = server.issue_pat(body.cap, body.owner)
        return {"pat": record.token, "cap": record.cap, "owner": record.owner}

    @app.post("/resource")
    def register_resource(body: RegisterResourceRequest, pat=Depends(pat_record)):
        ctx_id = server.register_resource(
            pat.token,
            ContextType(body.ctx_type),
            frozenset(Scope(s) for s in body.scopes),
        )
        return {"ctx_id": ctx_id}

    @app.post("/permission")
    def permission(body: PermissionRequest, pat=Depends(pat_record)):
        ticket = server.issue_permission_ticket(
            pat.cap, body.ctx_id, frozenset(body.scopes)
        )
        return {"ticket": ticket.ticket}

    @app.post("/token")
    def token(body: TokenRequest, caller: str = Depends(entity)):
        if caller != body.claims.requesting_party:
            raise HTTPException(
                status_code=403,
                detail="claimed requesting party does not match the caller",
            )
        outcome = server.grant_rpt(
            body.ticket,
            ClaimsDocument(body.claims.requesting_party, body.claims.attestations),
        )
        if isinstance(outcome, GrantDenied):
            return JSONResponse(
                status_code=403,
                content={
                    "denied": True,
                    "reason": outcome.reason,
                    "trace": ["7:policy-evaluated"],
                },
            )
        return {
            "rpt": outcome.token,
            "grants": [
                {"ctx_id": c, "scopes": sorted(s)} for c, s in outcome.grants
            ],
            "trace": ["7:policy-evaluated", "8:rpt-issued"],
        }

    @app.post("/introspect")
    def introspect(body: IntrospectRequest):
        return server.introspect(body.token)

    @app.post("/policy")
    def set_policy(body: PolicyRuleRequest, email: str = Depends(owner)):
        rules = server.set_policy(
            email,
            body.requesting_party,
            ContextType(body.ctx_type),
            frozenset(body.scopes),
        )
        return {"rules": [vars(r) | {"scopes": sorted(r.scopes)} for r in rules]}

    @app.delete("/policy")
    def remove_policy(body: PolicyRuleRequest, email: str = Depends(owner)):
        rules = server.remove_policy(
            email, body.requesting_party, ContextType(body.ctx_type)
        )
        return {"rules": [vars(r) | {"scopes": sorted(r.scopes)} for r in rules]}

    @app.get("/resources")
    def resources(email: str = Depends(owner)):
        return {"resources": server.list_resources(email)}

    @app.get("/shares")
    def shares(ctx_id: str, email: str = Depends(owner)):
        return {"shares": server.list_shares(email, ctx_id)}

    @app.get("/consent")
    def consent_prompts(email: str = Depends(owner)):
        return {
            "prompts": [
                {"prompt_id": p.prompt_id, "cap": p.cap, "status": p.status}
                for p in server.pending_prompts(email)
            ]
        }

    @app.post("/consent/{prompt_id}")
    def respond_consent(
        prompt_id: str, body: ConsentResponseRequest, email: str = Depends(owner)
    ):
        prompt = server._prompts.get(prompt_id)
        if prompt is None or prompt.owner != email:
            raise HTTPException(status_code=404, detail="unknown consent prompt")
        updated = server.respond_consent(prompt_id, body.approve)
        return {"prompt_id": updated.prompt_id, "status": updated.status}

    @app.post("/sweep")
    def sweep():
        return {"revoked": server.revocation_sweep()}

    @app.get("/audit-log")
    def audit_log():
        return {"events": server.log}

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
