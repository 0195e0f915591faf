"""Shared API plumbing: exception mapping and header-credential checks."""

from __future__ import annotations

import httpx
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import authz, cap, codec, idp, stream
from ..model import UnknownScope

_STATUS_BY_ERROR: list[tuple[type[Exception], int]] = [
    (authz.ConsentAbsent, 403),
    (authz.UnknownCap, 404),
    (authz.InvalidPAT, 401),
    (authz.EmptyScopes, 400),
    (authz.UnknownResource, 404),
    (authz.ScopeNotDeclared, 400),
    (authz.TicketExpired, 400),
    (authz.TicketConsumed, 400),
    (authz.UnknownContextType, 400),
    (stream.UnknownStream, 404),
    (stream.UnsupportedContextType, 400),
    (stream.DuplicateStream, 409),
    (stream.SubjectNotApproved, 403),
    (stream.StreamPaused, 409),
    (stream.DeliveryFailed, 502),
    (stream.WrongDeliveryMode, 400),
    (cap.UnknownSource, 401),
    (cap.VocabularyViolation, 400),
    (cap.UnknownCtxId, 404),
    (codec.BadSignature, 401),
    (codec.AudienceMismatch, 401),
    (codec.UnknownIssuer, 401),
    (codec.MalformedToken, 400),
    (codec.NoSigningKey, 500),
    (idp.BadCredential, 401),
    (idp.UnknownAccount, 401),
    (UnknownScope, 400),
    (ValueError, 400),
    (KeyError, 404),
]


def install_error_handlers(app: FastAPI) -> None:
    def upstream_handler(request: Request, exc: Exception):
        return JSONResponse(
            status_code=502,
            content={"error": "UpstreamError", "detail": str(exc)},
        )

    app.add_exception_handler(httpx.HTTPError, upstream_handler)

    for error_type, status in _STATUS_BY_ERROR:

        def handler(request: Request, exc: Exception, status=status):
            body = {"error": type(exc).__name__, "detail": str(exc)}
            if isinstance(exc, authz.ConsentAbsent) and exc.prompt_id:
                body["prompt_id"] = exc.prompt_id
            if isinstance(exc, stream.DuplicateStream):
                body["stream_id"] = str(exc.args[0])
            return JSONResponse(status_code=status, content=body)

        app.add_exception_handler(error_type, handler)


def require_header_credential(
    request: Request,
    name_header: str,
    secret_header: str,
    secrets: dict[str, str],
) -> str:
    """Validate a pre-shared credential passed in headers; returns the name."""
    name = request.headers.get(name_header)
    secret = request.headers.get(secret_header)
    if not name or secrets.get(name) != secret:
        raise HTTPException(status_code=401, detail=f"bad {name_header} credential")
    return name


def bearer_token(request: Request) -> str | None:
    header = request.headers.get("authorization", "")
    if header.lower().startswith("bearer "):
        return header.split(" ", 1)[1].strip()
    return None
