"""Client adapters the services talk through.

Core objects (context providers, relying parties) depend on these small
protocols, not on transports: a Local* client calls another in-process
core directly, an Http* client speaks to the corresponding service API.
Both present identical semantics, so unit tests run without sockets and
the harness runs over real loopback HTTP.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Protocol, runtime_checkable

import httpx

from . import authz as authz_errors
from .authz import AuthorizationServer, ClaimsDocument, GrantDenied
from .model import ContextType, Scope, UnknownScope

_DOMAIN_ERRORS: dict[str, type[Exception]] = {}


def _register_domain_errors() -> None:
    from . import cap, codec, idp, stream

    for module in (authz_errors, stream, cap, codec, idp):
        for name in dir(module):
            obj = getattr(module, name)
            if isinstance(obj, type) and issubclass(obj, Exception):
                _DOMAIN_ERRORS.setdefault(name, obj)
    _DOMAIN_ERRORS["UnknownScope"] = UnknownScope


def raise_for_domain_error(response: httpx.Response) -> None:
    """Translate a service's structured error body back into the domain
    exception it started as, so HTTP clients behave like local ones."""
    if response.status_code < 400:
        return
    if not _DOMAIN_ERRORS:
        _register_domain_errors()
    try:
        body = response.json()
    except ValueError:
        body = {}
    error_type = _DOMAIN_ERRORS.get(body.get("error", ""))
    if error_type is not None:
        raise error_type(body.get("detail", ""))
    response.raise_for_status()


@dataclass
class GrantOutcome:
    denied: bool
    rpt: Optional[str] = None
    grants: list[dict[str, Any]] = field(default_factory=list)
    reason: Optional[str] = None
    trace: list[str] = field(default_factory=list)


@runtime_checkable
class AuthzClient(Protocol):
    def issue_pat(self, cap: str, owner: str) -> str: ...

    def register_resource(
        self, pat: str, ctx_type: str, scopes: Iterable[str]
    ) -> str: ...

    def permission_ticket(
        self, pat: str, ctx_id: str, scopes: Iterable[str]
    ) -> str: ...

    def grant_rpt(
        self, ticket: str, requesting_party: str, attestations: dict[str, Any]
    ) -> GrantOutcome: ...

    def introspect(self, token: str) -> dict[str, Any]: ...


class LocalAuthzClient:
    def __init__(self, server: AuthorizationServer):
        self.server = server

    def issue_pat(self, cap: str, owner: str) -> str:
        return self.server.issue_pat(cap, owner).token

    def register_resource(self, pat: str, ctx_type: str, scopes: Iterable[str]) -> str:
        return self.server.register_resource(
            pat, ContextType(ctx_type), frozenset(Scope(s) for s in scopes)
        )

    def permission_ticket(self, pat: str, ctx_id: str, scopes: Iterable[str]) -> str:
        record = self.server.validate_pat(pat)
        return self.server.issue_permission_ticket(
            record.cap, ctx_id, frozenset(scopes)
        ).ticket

    def grant_rpt(
        self, ticket: str, requesting_party: str, attestations: dict[str, Any]
    ) -> GrantOutcome:
        outcome = self.server.grant_rpt(
            ticket, ClaimsDocument(requesting_party, attestations)
        )
        if isinstance(outcome, GrantDenied):
            return GrantOutcome(
                denied=True, reason=outcome.reason, trace=["7:policy-evaluated"]
            )
        return GrantOutcome(
            denied=False,
            rpt=outcome.token,
            grants=[{"ctx_id": c, "scopes": sorted(s)} for c, s in outcome.grants],
            trace=["7:policy-evaluated", "8:rpt-issued"],
        )

    def introspect(self, token: str) -> dict[str, Any]:
        return self.server.introspect(token)


class HttpAuthzClient:
    """Speaks the authorization-server HTTP API as one federation entity."""

    def __init__(self, base_url: str, entity: str, entity_secret: str):
        self.base_url = base_url.rstrip("/")
        self.entity = entity
        self.http = httpx.Client(
            base_url=self.base_url,
            headers={"X-Entity": entity, "X-Entity-Secret": entity_secret},
            timeout=10.0,
        )

    def issue_pat(self, cap: str, owner: str) -> str:
        response = self.http.post("/pat", json={"cap": cap, "owner": owner})
        if response.status_code == 403:
            from .authz import ConsentAbsent

            body = response.json()
            raise ConsentAbsent(
                body.get("detail", "consent absent"), prompt_id=body.get("prompt_id")
            )
        raise_for_domain_error(response)
        return response.json()["pat"]

    def register_resource(self, pat: str, ctx_type: str, scopes: Iterable[str]) -> str:
        response = self.http.post(
            "/resource",
            json={"ctx_type": ctx_type, "scopes": sorted(scopes)},
            headers={"Authorization": f"Bearer {pat}"},
        )
        raise_for_domain_error(response)
        return response.json()["ctx_id"]

    def permission_ticket(self, pat: str, ctx_id: str, scopes: Iterable[str]) -> str:
        response = self.http.post(
            "/permission",
            json={"ctx_id": ctx_id, "scopes": sorted(scopes)},
            headers={"Authorization": f"Bearer {pat}"},
        )
        raise_for_domain_error(response)
        return response.json()["ticket"]

    def grant_rpt(
        self, ticket: str, requesting_party: str, attestations: dict[str, Any]
    ) -> GrantOutcome:
        response = self.http.post(
            "/token",
            json={
                "ticket": ticket,
                "claims": {
                    "requesting_party": requesting_party,
                    "attestations": attestations,
                },
            },
        )
        if response.status_code == 403 and response.json().get("denied"):
            body = response.json()
            return GrantOutcome(
                denied=True,
                reason=body.get("reason", "denied"),
                trace=body.get("trace", ["7:policy-evaluated"]),
            )
        raise_for_domain_error(response)
        body = response.json()
        return GrantOutcome(
            denied=False,
            rpt=body["rpt"],
            grants=body["grants"],
            trace=body.get("trace", []),
        )

    def introspect(self, token: str) -> dict[str, Any]:
        response = self.http.post("/introspect", json={"token": token})
        raise_for_domain_error(response)
        return response.json()


class CapRequestOutcome:
    """Union of the two context-request outcomes, kept transport-neutral."""


@dataclass
class TicketChallenge(CapRequestOutcome):
    ticket: str
    trace: list[str] = field(default_factory=list)


@dataclass
class ContextDelivery(CapRequestOutcome):
    set_token: str
    trace: list[str] = field(default_factory=list)


@runtime_checkable
class CapClient(Protocol):
    def request_context(
        self, ctx_id: str, scopes: Iterable[str], rpt: Optional[str] = None
    ) -> CapRequestOutcome: ...

    def ensure_stream(
        self, receiver: str, endpoint: Optional[str], ctx_types: Iterable[str]
    ) -> str: ...

    def add_subject(self, stream_id: str, subject_email: str, rpt: str) -> str: ...


class LocalCapClient:
    def __init__(self, provider: "ContextProvider"):  # noqa: F821
        self.provider = provider

    def request_context(self, ctx_id, scopes, rpt=None):
        from .cap import ChallengeTicket

        outcome = self.provider.handle_context_request(ctx_id, frozenset(scopes), rpt)
        if isinstance(outcome, ChallengeTicket):
            return TicketChallenge(ticket=outcome.ticket, trace=outcome.trace)
        return ContextDelivery(set_token=outcome.set_token, trace=outcome.trace)

    def ensure_stream(self, receiver, endpoint, ctx_types):
        from .stream import Delivery, DuplicateStream

        mode = "push" if endpoint else "poll"
        try:
            stream = self.provider.streams.create_stream(
                receiver, Delivery(mode, endpoint), frozenset(ctx_types)
            )
            return stream.stream_id
        except DuplicateStream as existing:
            return str(existing.args[0])

    def add_subject(self, stream_id, subject_email, rpt):
        entry = self.provider.add_stream_subject(stream_id, subject_email, rpt)
        return entry.state


class HttpCapClient:
    def __init__(self, base_url: str, entity: str, entity_secret: str):
        self.base_url = base_url.rstrip("/")
        self.http = httpx.Client(
            base_url=self.base_url,
            headers={"X-Entity": entity, "X-Entity-Secret": entity_secret},
            timeout=10.0,
        )

    def request_context(self, ctx_id, scopes, rpt=None):
        headers = {}
        if rpt:
            headers["Authorization"] = f"Bearer {rpt}"
        response = self.http.get(
            f"/ctx/{ctx_id}",
            params={"scopes": ",".join(sorted(scopes))},
            headers=headers,
        )
        if response.status_code == 401:
            body = response.json()
            return TicketChallenge(ticket=body["ticket"], trace=body.get("trace", []))
        raise_for_domain_error(response)
        body = response.json()
        return ContextDelivery(set_token=body["set"], trace=body.get("trace", []))

    def ensure_stream(self, receiver, endpoint, ctx_types):
        response = self.http.post(
            "/streams",
            json={
                "receiver": receiver,
                "delivery": {"mode": "push" if endpoint else "poll", "endpoint": endpoint},
                "ctx_types": sorted(ctx_types),
            },
        )
        if response.status_code == 409:
            return response.json()["stream_id"]
        raise_for_domain_error(response)
        return response.json()["stream_id"]

    def add_subject(self, stream_id, subject_email, rpt):
        response = self.http.post(
            f"/streams/{stream_id}/subjects",
            json={"subject": subject_email, "rpt": rpt},
        )
        raise_for_domain_error(response)
        return response.json()["state"]


@runtime_checkable
class ObserveClient(Protocol):
    def observe(
        self,
        subject_email: str,
        ctx_type: str,
        payload: dict[str, Any],
    ) -> None: ...


class LocalObserveClient:
    def __init__(self, provider: "ContextProvider", source: str):  # noqa: F821
        self.provider = provider
        self.source = source

    def observe(self, subject_email, ctx_type, payload):
        from .cap import Observation
        from .model import SubjectId

        self.provider.ingest(
            Observation(
                source=self.source,
                subject=SubjectId.of(subject_email),
                ctx_type=ContextType(ctx_type),
                payload=payload,
            )
        )


class HttpObserveClient:
    def __init__(self, base_url: str, source: str, source_secret: str):
        self.http = httpx.Client(
            base_url=base_url.rstrip("/"),
            headers={"X-Source": source, "X-Source-Secret": source_secret},
            timeout=10.0,
        )

    def observe(self, subject_email, ctx_type, payload):
        response = self.http.post(
            "/observe",
            json={
                "subject": subject_email,
                "ctx_type": ctx_type,
                "payload": payload,
            },
        )
        raise_for_domain_error(response)


class LocalPushFabric:
    """In-process delivery wire: endpoint URL -> receiver callable."""

    def __init__(self) -> None:
        self.endpoints: dict[str, Any] = {}

    def register(self, endpoint: str, handler) -> None:
        self.endpoints[endpoint] = handler

    def push(self, endpoint: str, token: str) -> None:
        handler = self.endpoints.get(endpoint)
        if handler is None:
            raise ConnectionError(f"no receiver registered at {endpoint}")
        handler(token)


def http_pusher(endpoint: str, token: str) -> None:
    """POST a compact event token to a push endpoint."""
    response = httpx.post(
        endpoint,
        content=token.encode("ascii"),
        headers={"Content-Type": "application/secevent+jwt"},
        timeout=10.0,
    )
    response.raise_for_status()
