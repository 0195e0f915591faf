"""HTTP surface of a context provider.

/ctx/{ctx_id} is the requesting-party endpoint: without a valid token the
response is a 401 challenge whose body carries a fresh permission ticket.
Stream management endpoints authenticate the receiver with its federation
entity credential; /observe authenticates feeders with source credentials.
"""

from __future__ import annotations

from typing import Callable, Optional

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from ..cap import ChallengeTicket, ContextProvider, Observation, UpstreamSubscription
from ..model import ContextType, SubjectId
from ..stream import Delivery
from .common import bearer_token, install_error_handlers, require_header_credential
from .schemas import (
    AddSubjectRequest,
    CreateStreamRequest,
    ObserveRequest,
    SubscribeUpstreamRequest,
)

UpstreamClientFactory = Callable[[str], object]


def _stream_json(config) -> dict:
    return {
        "stream_id": config.stream_id,
        "transmitter": config.transmitter,
        "receiver": config.receiver,
        "delivery": {"mode": config.delivery.mode, "endpoint": config.delivery.endpoint},
        "ctx_types": sorted(config.requested_ctx_types),
        "status": config.status,
    }


def create_cap_app(
    provider: ContextProvider,
    *,
    source_secrets: dict[str, str],
    entity_secrets: dict[str, str],
    user_accounts: dict[str, str],
    upstream_client_factory: Optional[UpstreamClientFactory] = None,
) -> FastAPI:
    app = FastAPI(title=f"context provider {provider.issuer}")
    install_error_handlers(app)

    def source(request: Request) -> str:
        return require_header_credential(
            request, "X-Source", "X-Source-Secret", source_secrets
        )

    def entity(request: Request) -> str:
        return require_header_credential(
            request, "X-Entity", "X-Entity-Secret", entity_secrets
        )

    def user(request: Request) -> str:
        return require_header_credential(
            request, "X-User", "X-User-Secret", user_accounts
        )

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "role": "cap", "issuer": provider.issuer}

    @app.post("/observe")
    def observe(body: ObserveRequest, caller: str = Depends(source)):
        report = provider.ingest(
            Observation(
                source=caller,
                subject=SubjectId.of(body.subject, body.device),
                ctx_type=ContextType(body.ctx_type),
                payload=body.payload,
            )
        )
        return {
            "values": report.values,
            "changed": report.changed,
            "emissions": report.emissions,
        }

    @app.get("/ctx/{ctx_id}")
    def context_request(ctx_id: str, request: Request, scopes: str = ""):
        requested = frozenset(s for s in scopes.split(",") if s)
        outcome = provider.handle_context_request(
            ctx_id, requested, bearer_token(request)
        )
        if isinstance(outcome, ChallengeTicket):
            return JSONResponse(
                status_code=401,
                content={"ticket": outcome.ticket, "trace": outcome.trace},
                headers={"WWW-Authenticate": f'UMA ticket="{outcome.ticket}"'},
            )
        return {"set": outcome.set_token, "trace": outcome.trace}

    @app.get("/ctx-id")
    def ctx_ids(email: str = Depends(user)):
        return {"ctx_ids": provider.ctx_ids_for(email)}

    @app.post("/bootstrap")
    def bootstrap(body: dict):
        owner = body["owner"]
        return {"ctx_ids": provider.bootstrap_with_authz(owner)}

    @app.post("/streams")
    def create_stream(body: CreateStreamRequest, caller: str = Depends(entity)):
        if caller != body.receiver:
            raise HTTPException(
                status_code=403, detail="receiver must match the authenticated entity"
            )
        config = provider.streams.create_stream(
            body.receiver,
            Delivery(body.delivery.mode, body.delivery.endpoint),
            frozenset(body.ctx_types),
        )
        return _stream_json(config)

    @app.get("/streams/{stream_id}")
    def read_stream(stream_id: str, caller: str = Depends(entity)):
        return _stream_json(provider.streams.get_stream(stream_id))

    @app.post("/streams/{stream_id}/subjects")
    def add_subject(stream_id: str, body: AddSubjectRequest, caller: str = Depends(entity)):
        entry = provider.add_stream_subject(stream_id, body.subject, body.rpt)
        return {"state": entry.state, "reason": entry.reason}

    @app.patch("/streams/{stream_id}")
    def update_stream(stream_id: str, body: dict, caller: str = Depends(entity)):
        return _stream_json(
            provider.streams.update_stream(stream_id, endpoint=body.get("endpoint"))
        )

    @app.post("/streams/{stream_id}/pause")
    def pause(stream_id: str, caller: str = Depends(entity)):
        return _stream_json(provider.streams.pause_stream(stream_id))

    @app.post("/streams/{stream_id}/resume")
    def resume(stream_id: str, caller: str = Depends(entity)):
        return _stream_json(provider.streams.resume_stream(stream_id))

    @app.delete("/streams/{stream_id}")
    def delete(stream_id: str, caller: str = Depends(entity)):
        provider.streams.delete_stream(stream_id)
        return {"deleted": stream_id}

    @app.get("/streams/{stream_id}/poll")
    def poll(stream_id: str, caller: str = Depends(entity)):
        config = provider.streams.get_stream(stream_id)
        if config.receiver != caller:
            raise HTTPException(status_code=403, detail="not the stream receiver")
        return {"tokens": provider.streams.poll(stream_id)}

    @app.post("/streams/flush")
    def flush():
        return {"delivered": provider.streams.flush()}

    @app.get("/streams-pending")
    def pending():
        return {"pending": provider.streams.pending_count()}

    @app.post("/upstream-recv")
    async def upstream_recv(request: Request):
        token = (await request.body()).decode("ascii")
        return provider.receive_upstream(token)

    @app.post("/subscribe-upstream")
    def subscribe_upstream(body: SubscribeUpstreamRequest):
        if upstream_client_factory is None:
            raise HTTPException(status_code=501, detail="no upstream wiring configured")
        client = upstream_client_factory(body.upstream_cap)
        result = provider.subscribe_upstream(
            body.owner,
            UpstreamSubscription(
                upstream_cap=body.upstream_cap,
                upstream_ctx_type=body.upstream_ctx_type,
                fold_into=body.fold_into,
            ),
            client,
            body.upstream_ctx_id,
            frozenset(body.scopes),
            body.push_endpoint,
        )
        return {
            "denied": result.denied,
            "grants": result.grants,
            "trace": result.trace,
        }

    @app.get("/transmit-log")
    def transmit_log():
        return {"entries": provider.streams.transmit_log}

    @app.get("/upstream-inbox")
    def upstream_inbox():
        return {"entries": provider.upstream_inbox}

    return app
