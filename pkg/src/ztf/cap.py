"""Context attribute provider: ingests observations, derives context values,
registers resources with the authorization server, and serves or streams
them to authorized requesting parties.

Derivation rules are per-type fold functions. Three are built in:

  device-location  — remembers (device, ip) sightings; an observation
                     derives "used:ip:<ip>" as whether that pair was seen
                     before this request, then records it.
  device-health    — compares the reported agent version against the
                     latest known release: "up-to-date:<device>".
  environment      — checks the reported access point against a
                     whitelist: "wifi-ap:trusted".

A provider can also subscribe to an upstream provider (acting as the
requesting party itself); verified upstream events are folded into the
local resource and re-emitted downstream.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Optional

from .clock import Clock, SystemClock
from .codec import KeyRing, SecurityEventToken, ContextEvent, decode_and_verify, sign_claims
from .ids import IdFactory
from .model import (
    ContextResource,
    ContextType,
    ContextValueSet,
    JsonValue,
    Scope,
    SubjectId,
    filter_by_scopes,
    merge_contexts,
)
from .stream import StreamManager, UnsupportedContextType

if TYPE_CHECKING:
    from .clients import AuthzClient, CapClient

from .uma_client import AcquireResult, acquire_context_access


class UnknownSource(Exception):
    pass


class VocabularyViolation(Exception):
    pass


class UnknownCtxId(Exception):
    pass


@dataclass(frozen=True)
class ServedType:
    ctx_type: ContextType
    scopes: frozenset[Scope]
    derivation: str
    vocabulary: frozenset[str]

    def __post_init__(self) -> None:
        if not self.scopes:
            raise ValueError(f"served type {self.ctx_type.uri} needs a scope set")


@dataclass(frozen=True)
class UpstreamSubscription:
    upstream_cap: str
    upstream_ctx_type: str
    fold_into: str  # local served type the upstream entries merge into


@dataclass(frozen=True)
class CapConfig:
    issuer: str
    served: tuple[ServedType, ...]
    known_sources: frozenset[str] = frozenset()
    upstreams: tuple[UpstreamSubscription, ...] = ()
    latest_version: str = "1.0.0"
    wifi_whitelist: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        served_uris = {t.ctx_type.uri for t in self.served}
        for upstream in self.upstreams:
            if upstream.fold_into not in served_uris:
                raise ValueError(
                    f"upstream folds into unserved type {upstream.fold_into}"
                )


@dataclass
class Observation:
    source: str
    subject: SubjectId
    ctx_type: ContextType
    payload: dict[str, Any]
    observed_at: Optional[float] = None


@dataclass
class IngestReport:
    values: dict[str, JsonValue]
    changed: dict[str, JsonValue]
    emissions: list[dict[str, Any]]


@dataclass
class ChallengeTicket:
    """Authorization missing: the caller must take this ticket to the
    authorization server (a protocol outcome, not an error)."""

    ticket: str
    trace: list[str] = field(default_factory=list)


@dataclass
class ContextResponse:
    set_token: str
    trace: list[str] = field(default_factory=list)


def _version_tuple(version: str) -> tuple[int, ...]:
    parts = []
    for piece in version.split("."):
        digits = "".join(ch for ch in piece if ch.isdigit())
        parts.append(int(digits) if digits else 0)
    return tuple(parts)


def _derive_device_location(
    state: dict, obs: Observation, config: CapConfig
) -> dict[str, JsonValue]:
    device = obs.payload.get("device") or ""
    ip = obs.payload["ip"]
    seen: set[tuple[str, str]] = state.setdefault("seen", set())
    already_used = (device, ip) in seen
    seen.add((device, ip))
    return {"ip:current": ip, f"used:ip:{ip}": already_used}


def _derive_device_health(
    state: dict, obs: Observation, config: CapConfig
) -> dict[str, JsonValue]:
    device = obs.payload["device"]
    version = obs.payload["version"]
    up_to_date = _version_tuple(version) >= _version_tuple(config.latest_version)
    return {f"up-to-date:{device}": up_to_date, f"version:{device}": version}


def _derive_environment(
    state: dict, obs: Observation, config: CapConfig
) -> dict[str, JsonValue]:
    access_point = obs.payload["wifi_ap"]
    return {
        "wifi-ap:current": access_point,
        "wifi-ap:trusted": access_point in config.wifi_whitelist,
    }


DERIVATIONS: dict[str, Callable[[dict, Observation, CapConfig], dict[str, JsonValue]]] = {
    "device-location": _derive_device_location,
    "device-health": _derive_device_health,
    "environment": _derive_environment,
}


class ContextProvider:
    def __init__(
        self,
        config: CapConfig,
        *,
        keyring: KeyRing,
        authz: "AuthzClient",
        pusher: Callable[[str, str], None],
        clock: Clock | None = None,
        ids: IdFactory | None = None,
    ):
        self.config = config
        self.issuer = config.issuer
        self.keyring = keyring
        self.authz = authz
        self.clock = clock or SystemClock()
        self.ids = ids or IdFactory()
        self._served = {t.ctx_type.uri: t for t in config.served}

        self._lock = threading.RLock()
        self._resources: dict[tuple[str, str], ContextResource] = {}
        self._state: dict[tuple[str, str], dict] = {}
        self._ctx_ids: dict[tuple[str, str], str] = {}
        self._ctx_index: dict[str, tuple[str, str]] = {}
        self._pats: dict[str, str] = {}
        self._subscriptions: list[dict[str, Any]] = []
        self._seen_upstream_jtis: set[str] = set()
        self.upstream_inbox: list[dict[str, Any]] = []
        self.request_log: list[dict[str, Any]] = []

        self.streams = StreamManager(
            config.issuer,
            set(self._served),
            ids=self.ids,
            clock=self.clock,
            introspect=authz.introspect,
            pusher=pusher,
            ctx_id_resolver=self._resolve_ctx_id,
        )

    # -- registration ------------------------------------------------------

    def bootstrap_with_authz(self, owner_email: str) -> dict[str, str]:
        """Obtain a protection token and register every served type."""
        with self._lock:
            pat = self.authz.issue_pat(self.issuer, owner_email)
            self._pats[owner_email] = pat
            registered: dict[str, str] = {}
            for served in self.config.served:
                ctx_id = self.authz.register_resource(
                    pat,
                    served.ctx_type.uri,
                    [s.name for s in served.scopes],
                )
                key = (owner_email, served.ctx_type.uri)
                self._ctx_ids[key] = ctx_id
                self._ctx_index[ctx_id] = key
                registered[served.ctx_type.uri] = ctx_id
                existing = self._resources.get(key)
                if existing is not None and existing.ctx_id != ctx_id:
                    # resource was auto-created before registration
                    self._resources[key] = ContextResource(
                        ctx_id=ctx_id,
                        owner=existing.owner,
                        ctx_type=existing.ctx_type,
                        scopes=existing.scopes,
                        values=existing.values,
                        cap_origin=existing.cap_origin,
                    )
            return registered

    def ctx_ids_for(self, owner_email: str) -> dict[str, str]:
        """The user-facing ctx_id fetch (authenticated GET in the API)."""
        with self._lock:
            return {
                type_uri: ctx_id
                for (owner, type_uri), ctx_id in self._ctx_ids.items()
                if owner == owner_email
            }

    def _resolve_ctx_id(self, subject: SubjectId, type_uri: str) -> Optional[str]:
        return self._ctx_ids.get((subject.user.value, type_uri))

    # -- resources ------------------------------------------------------------

    def _resource_for(self, owner_email: str, type_uri: str) -> ContextResource:
        key = (owner_email, type_uri)
        resource = self._resources.get(key)
        if resource is None:
            served = self._served[type_uri]
            resource = ContextResource(
                ctx_id=self._ctx_ids.get(key, f"unregistered:{owner_email}:{type_uri}"),
                owner=SubjectId.of(owner_email),
                ctx_type=served.ctx_type,
                scopes=served.scopes,
                values=ContextValueSet(),
                cap_origin=self.issuer,
            )
            self._resources[key] = resource
        return resource

    def resource_view(self, owner_email: str, type_uri: str) -> ContextResource:
        with self._lock:
            return self._resource_for(owner_email, type_uri)

    # -- ingestion ------------------------------------------------------------

    def ingest(self, obs: Observation) -> IngestReport:
        with self._lock:
            if obs.source not in self.config.known_sources:
                raise UnknownSource(obs.source)
            served = self._served.get(obs.ctx_type.uri)
            if served is None:
                raise UnsupportedContextType(obs.ctx_type.uri)
            unknown = set(obs.payload) - set(served.vocabulary)
            if unknown:
                raise VocabularyViolation(", ".join(sorted(unknown)))
            if obs.observed_at is None:
                obs.observed_at = self.clock.now()

            owner = obs.subject.user.value
            key = (owner, obs.ctx_type.uri)
            resource = self._resource_for(owner, obs.ctx_type.uri)
            state = self._state.setdefault(key, {})
            entries = DERIVATIONS[served.derivation](state, obs, self.config)
            changed = {
                k: v
                for k, v in entries.items()
                if resource.values.entries.get(k) != v
            }
            resource = merge_contexts(resource, ContextValueSet(entries))
            self._resources[key] = resource

        emissions: list[dict[str, Any]] = []
        if changed:
            emissions = self._emit_update(obs.subject, resource)
        return IngestReport(
            values=resource.values.to_json(), changed=changed, emissions=emissions
        )

    def _emit_update(
        self, subject: SubjectId, resource: ContextResource
    ) -> list[dict[str, Any]]:
        def build(receiver: str, allowed: set[str]) -> Optional[str]:
            filtered = filter_by_scopes(
                resource, frozenset(Scope(s) for s in allowed)
            )
            if len(filtered) == 0:
                return None
            return self._encode_set(subject, resource.ctx_type, filtered, receiver)

        return self.streams.on_context_update(subject, resource.ctx_type.uri, build)

    def _encode_set(
        self,
        subject: SubjectId,
        ctx_type: ContextType,
        values: ContextValueSet,
        audience: str,
    ) -> str:
        token = SecurityEventToken(
            iss=self.issuer,
            aud=audience,
            iat=int(self.clock.now()),
            jti=self.ids.new_id("jti"),
            events={ctx_type.uri: ContextEvent(subject=subject, entries=values)},
        )
        return sign_claims(self.issuer, token.to_claims(), self.keyring)

    # -- serving requesting parties ------------------------------------------------

    def handle_context_request(
        self,
        ctx_id: str,
        scopes: frozenset[str],
        rpt: Optional[str] = None,
    ) -> ContextResponse | ChallengeTicket:
        with self._lock:
            located = self._ctx_index.get(ctx_id)
            if located is None:
                raise UnknownCtxId(ctx_id)
            owner, type_uri = located

            granted: Optional[set[str]] = None
            requester: Optional[str] = None
            if rpt is not None:
                info = self.authz.introspect(rpt)
                if info.get("active"):
                    for grant in info.get("grants", []):
                        if grant["ctx_id"] == ctx_id and grant["scopes"]:
                            granted = set(grant["scopes"])
                            requester = info["requesting_party"]
                            break

            if granted is None:
                pat = self._pats.get(owner)
                if pat is None:
                    raise UnknownCtxId(ctx_id)
                ticket = self.authz.permission_ticket(pat, ctx_id, sorted(scopes))
                self.request_log.append(
                    {"ctx_id": ctx_id, "outcome": "challenge", "scopes": sorted(scopes)}
                )
                return ChallengeTicket(
                    ticket=ticket,
                    trace=[
                        "4:permission-ticket-obtained",
                        "5:ticket-challenge-returned",
                    ],
                )

            resource = self._resource_for(owner, type_uri)
            filtered = filter_by_scopes(
                resource, frozenset(Scope(s) for s in granted)
            )
            token = self._encode_set(
                resource.owner, resource.ctx_type, filtered, requester
            )
            self.request_log.append(
                {
                    "ctx_id": ctx_id,
                    "outcome": "response",
                    "requester": requester,
                    "granted": sorted(granted),
                }
            )
            return ContextResponse(
                set_token=token,
                trace=["10:rpt-introspected", "11:scoped-context-provided"],
            )

    def add_stream_subject(self, stream_id: str, subject_email: str, rpt: Optional[str] = None):
        """Add a subject to a stream; on approval, send the current snapshot."""
        from .stream import DeliveryFailed

        subject = SubjectId.of(subject_email)
        entry = self.streams.add_subject(stream_id, subject, rpt)
        if entry.state != "approved":
            return entry
        stream = self.streams.get_stream(stream_id)
        for type_uri in sorted(stream.requested_ctx_types):
            with self._lock:
                resource = self._resource_for(subject_email, type_uri)
                ctx_id = self._ctx_ids.get((subject_email, type_uri))
            if len(resource.values) == 0 or ctx_id is None:
                continue
            allowed = self.streams.granted_scopes(stream_id, subject, ctx_id)
            filtered = filter_by_scopes(resource, frozenset(Scope(s) for s in allowed))
            if len(filtered) == 0:
                continue
            token = self._encode_set(subject, resource.ctx_type, filtered, stream.receiver)
            try:
                self.streams.transmit(stream_id, subject, token)
            except DeliveryFailed:
                pass  # retained for retry
        return entry

    # -- upstream aggregation -----------------------------------------------------------

    def subscribe_upstream(
        self,
        owner_email: str,
        subscription: UpstreamSubscription,
        upstream_client: "CapClient",
        upstream_ctx_id: str,
        scopes: frozenset[str],
        push_endpoint: str,
    ) -> AcquireResult:
        """Acquire access to an upstream provider's context (this provider is
        the requesting party) and subscribe to its updates."""
        result = acquire_context_access(
            upstream_client,
            self.authz,
            requesting_party=self.issuer,
            subject_email=owner_email,
            ctx_id=upstream_ctx_id,
            scopes=scopes,
            attestations={"role": "context-provider"},
        )
        if result.denied:
            return result
        stream_id = upstream_client.ensure_stream(
            self.issuer, push_endpoint, [subscription.upstream_ctx_type]
        )
        state = upstream_client.add_subject(stream_id, owner_email, result.rpt)
        with self._lock:
            self._subscriptions.append(
                {
                    "owner": owner_email,
                    "upstream_cap": subscription.upstream_cap,
                    "upstream_ctx_type": subscription.upstream_ctx_type,
                    "fold_into": subscription.fold_into,
                    "stream_id": stream_id,
                    "subject_state": state,
                    "rpt": result.rpt,
                }
            )
        if result.set_token:
            self.receive_upstream(result.set_token, origin="response")
        return result

    def receive_upstream(self, token: str, origin: str = "stream-push") -> dict[str, Any]:
        """Verify a pushed upstream event and fold it into local resources."""
        decoded = decode_and_verify(token, self.issuer, self.keyring)
        with self._lock:
            if decoded.jti in self._seen_upstream_jtis:
                return {"accepted": False, "reason": "duplicate"}
            self._seen_upstream_jtis.add(decoded.jti)
            self.upstream_inbox.append(
                {"iss": decoded.iss, "jti": decoded.jti, "token": token, "origin": origin}
            )
            folded = []
            pending: list[tuple[SubjectId, ContextResource]] = []
            for type_uri, event in decoded.events.items():
                matched = [
                    s
                    for s in self._subscriptions
                    if s["upstream_cap"] == decoded.iss
                    and s["upstream_ctx_type"] == type_uri
                ]
                if not matched:
                    continue
                for sub in matched:
                    owner = event.subject.user.value
                    key = (owner, sub["fold_into"])
                    resource = self._resource_for(owner, sub["fold_into"])
                    changed = {
                        k: v
                        for k, v in event.entries.entries.items()
                        if resource.values.entries.get(k) != v
                    }
                    resource = merge_contexts(resource, event.entries)
                    self._resources[key] = resource
                    folded.append(sub["fold_into"])
                    if changed:
                        pending.append((event.subject, resource))
        emissions = []
        for subject, resource in pending:
            emissions.extend(self._emit_update(subject, resource))
        return {"accepted": True, "folded": folded, "emissions": emissions}
