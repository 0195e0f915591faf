"""Relying party: enforcement gate, decision rules, and evidence supply.

Every access request is decided from two evidence sources: the presented
identity token (verified against the federation trust anchors) and the
context entries cached from verified event tokens. Nothing else reaches
the decision; absence of evidence contributes to deny, and the default
effect is deny.

The decision trace lists the identity claims and every context entry
consulted, in order, so tests can assert WHY a decision happened. Traces
carry no timestamps or token ids: two decisions over the same evidence
produce identical traces.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional

from .clock import Clock, SystemClock
from .codec import (
    AudienceMismatch,
    BadSignature,
    KeyRing,
    MalformedToken,
    UnknownIssuer,
    decode_and_verify,
    verify_claims,
)
from .ids import IdFactory
from .model import JsonValue, SubjectId

if TYPE_CHECKING:
    from .clients import AuthzClient, CapClient, ObserveClient

from .uma_client import AcquireResult, acquire_context_access


class DuplicateRegistration(Exception):
    def __init__(self, ctx_id: str):
        super().__init__(ctx_id)
        self.ctx_id = ctx_id


@dataclass
class AccessRequest:
    identity_token: Optional[str]
    source_ip: str
    device_cn: Optional[str] = None
    resource_path: str = "/"


@dataclass(frozen=True)
class Condition:
    """One context predicate: entry under (cap, ctx_type) must equal a value.

    The key may reference request fields: {source_ip}, {device}, {user}.
    """

    cap: str
    ctx_type: str
    key: str
    equals: JsonValue

    def to_json(self) -> dict[str, Any]:
        return {
            "cap": self.cap,
            "ctx_type": self.ctx_type,
            "key": self.key,
            "equals": self.equals,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "Condition":
        return cls(doc["cap"], doc["ctx_type"], doc["key"], doc["equals"])


@dataclass(frozen=True)
class DecisionRule:
    name: str
    effect: str  # allow | deny | step-up
    require_identity: bool = True
    conditions: tuple[Condition, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "effect": self.effect,
            "require_identity": self.require_identity,
            "conditions": [c.to_json() for c in self.conditions],
        }


@dataclass(frozen=True)
class DecisionPolicy:
    rules: tuple[DecisionRule, ...] = ()
    default: str = "deny"

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "DecisionPolicy":
        rules = tuple(
            DecisionRule(
                name=r["name"],
                effect=r["effect"],
                require_identity=r.get("require_identity", True),
                conditions=tuple(
                    Condition.from_json(c) for c in r.get("conditions", [])
                ),
            )
            for r in doc.get("rules", [])
        )
        return cls(rules=rules, default=doc.get("default", "deny"))

    def to_json(self) -> dict[str, Any]:
        return {"rules": [r.to_json() for r in self.rules], "default": self.default}


@dataclass
class Decision:
    effect: str
    rule: Optional[str]
    trace: dict[str, Any]

    @property
    def allowed(self) -> bool:
        return self.effect == "allow"


@dataclass
class ObservationTarget:
    client: "ObserveClient"
    ctx_type: str


class RelyingParty:
    def __init__(
        self,
        uri: str,
        *,
        trusted_issuers: set[str],
        keyring: KeyRing,
        policy: DecisionPolicy,
        authz: "AuthzClient",
        cap_clients: dict[str, "CapClient"] | None = None,
        observe_targets: list[ObservationTarget] | None = None,
        clock: Clock | None = None,
        ids: IdFactory | None = None,
        staleness_bound: float = 300.0,
        push_endpoint: str | None = None,
    ):
        self.uri = uri
        self.push_endpoint = push_endpoint or f"{uri}/ctx-recv"
        self.trusted_issuers = set(trusted_issuers)
        self.keyring = keyring
        self.policy = policy
        self.authz = authz
        self.cap_clients = dict(cap_clients or {})
        self.observe_targets = list(observe_targets or [])
        self.clock = clock or SystemClock()
        self.ids = ids or IdFactory()
        self.staleness_bound = staleness_bound

        self._lock = threading.RLock()
        # (user, cap, ctx_type) -> {"entries", "received_at", "jti"}
        self._cache: dict[tuple[str, str, str], dict[str, Any]] = {}
        self._registered: dict[tuple[str, str], str] = {}  # (user, cap) -> ctx_id
        self._rpts: dict[tuple[str, str], str] = {}  # (user, ctx_id) -> rpt
        self._seen_jtis: set[str] = set()
        self.delivery_log: list[dict[str, Any]] = []
        self.decision_log: list[dict[str, Any]] = []
        self.flow_traces: list[list[str]] = []

    # -- identity (PIP, authentication agent) --------------------------------

    def pip_get_identity(
        self, req: AccessRequest
    ) -> tuple[Optional[dict[str, Any]], dict[str, Any]]:
        if not req.identity_token:
            return None, {"verified": False, "reason": "no-identity-token"}
        try:
            claims = verify_claims(req.identity_token, self.keyring)
        except BadSignature:
            return None, {"verified": False, "reason": "bad-signature"}
        except UnknownIssuer:
            return None, {"verified": False, "reason": "unknown-issuer"}
        except MalformedToken:
            return None, {"verified": False, "reason": "malformed-token"}
        if claims.get("aud") != self.uri:
            return None, {"verified": False, "reason": "audience-mismatch"}
        if claims.get("iss") not in self.trusted_issuers:
            return None, {"verified": False, "reason": "untrusted-issuer"}
        if not claims.get("sub"):
            return None, {"verified": False, "reason": "missing-subject"}
        return claims, {
            "verified": True,
            "sub": claims["sub"],
            "iss": claims["iss"],
        }

    # -- context (PIP, receiver agent) -------------------------------------------

    def receive_push(self, token: str, origin: str = "stream-push") -> dict[str, Any]:
        """Verify an inbound event token, dedup by jti, cache its entries.
        The cache is only ever written here, from verified tokens."""
        try:
            decoded = decode_and_verify(token, self.uri, self.keyring)
        except (BadSignature, UnknownIssuer, MalformedToken, AudienceMismatch) as exc:
            return {"accepted": False, "reason": type(exc).__name__}
        with self._lock:
            if decoded.jti in self._seen_jtis:
                return {"accepted": False, "reason": "duplicate"}
            self._seen_jtis.add(decoded.jti)
            now = self.clock.now()
            for type_uri, event in decoded.events.items():
                user = event.subject.user.value
                self._cache[(user, decoded.iss, type_uri)] = {
                    "entries": event.entries.to_json(),
                    "received_at": now,
                    "jti": decoded.jti,
                }
                self.delivery_log.append(
                    {
                        "receiver": self.uri,
                        "iss": decoded.iss,
                        "jti": decoded.jti,
                        "ctx_type": type_uri,
                        "subject": user,
                        "entries": event.entries.to_json(),
                        "token": token,
                        "origin": origin,
                    }
                )
        return {"accepted": True}

    def pip_get_context(
        self, user_email: str, cap: str, ctx_type: str
    ) -> Optional[dict[str, JsonValue]]:
        with self._lock:
            row = self._cache.get((user_email, cap, ctx_type))
            if row is None:
                return None
            if self.clock.now() - row["received_at"] > self.staleness_bound:
                return None
            return dict(row["entries"])

    # -- registration and grant acquisition -----------------------------------------

    def register_ctx_id(self, user_email: str, cap: str, ctx_id: str) -> str:
        with self._lock:
            existing = self._registered.get((user_email, cap))
            if existing is not None:
                return existing
            self._registered[(user_email, cap)] = ctx_id
            return ctx_id

    def registered_ctx_id(self, user_email: str, cap: str) -> Optional[str]:
        with self._lock:
            return self._registered.get((user_email, cap))

    def acquire_context_access(
        self,
        user_email: str,
        cap: str,
        ctx_type: str,
        scopes: set[str],
    ) -> AcquireResult:
        """Run the grant flow against a provider and subscribe to its stream."""
        ctx_id = self.registered_ctx_id(user_email, cap)
        if ctx_id is None:
            raise KeyError(f"no ctx_id registered for {user_email} at {cap}")
        client = self.cap_clients[cap]
        result = acquire_context_access(
            client,
            self.authz,
            requesting_party=self.uri,
            subject_email=user_email,
            ctx_id=ctx_id,
            scopes=scopes,
            attestations={"role": "relying-party"},
        )
        with self._lock:
            self.flow_traces.append(list(result.trace))
        if result.denied:
            return result
        with self._lock:
            self._rpts[(user_email, ctx_id)] = result.rpt
        stream_id = client.ensure_stream(self.uri, self.push_endpoint, [ctx_type])
        client.add_subject(stream_id, user_email, result.rpt)
        if result.set_token:
            self.receive_push(result.set_token, origin="response")
        return result

    def rpt_for(self, user_email: str, cap: str) -> Optional[str]:
        ctx_id = self.registered_ctx_id(user_email, cap)
        if ctx_id is None:
            return None
        with self._lock:
            return self._rpts.get((user_email, ctx_id))

    # -- decisions (PEP / PDP) ------------------------------------------------------

    def handle_access(self, req: AccessRequest) -> Decision:
        claims, identity = self.pip_get_identity(req)
        user_email = claims["sub"] if claims else None

        consulted: list[dict[str, Any]] = []
        reasons: list[str] = []
        effect, matched_rule = self._decide(req, identity, user_email, consulted, reasons)

        ctx_refs: dict[str, Any] = {}
        for entry in consulted:
            cap = entry["cap"]
            if cap not in ctx_refs and user_email is not None:
                ctx_refs[cap] = {
                    "ctx_id": self.registered_ctx_id(user_email, cap),
                    "rpt": self.rpt_for(user_email, cap),
                }

        trace = {
            "identity": identity,
            "context": consulted,
            "decision": effect,
            "rule": matched_rule,
            "reasons": reasons,
            "ctx_refs": ctx_refs,
        }
        decision = Decision(effect=effect, rule=matched_rule, trace=trace)
        with self._lock:
            self.decision_log.append(
                {
                    "source_ip": req.source_ip,
                    "device": req.device_cn,
                    "path": req.resource_path,
                    "decision": effect,
                    "trace": trace,
                }
            )
        if decision.allowed and user_email is not None:
            self._emit_observations(req, user_email)
        return decision

    def _decide(
        self,
        req: AccessRequest,
        identity: dict[str, Any],
        user_email: Optional[str],
        consulted: list[dict[str, Any]],
        reasons: list[str],
    ) -> tuple[str, Optional[str]]:
        for rule in self.policy.rules:
            if rule.require_identity and not identity.get("verified"):
                reasons.append(f"{rule.name}: identity required but not verified")
                continue
            satisfied = True
            for condition in rule.conditions:
                key = condition.key.format(
                    source_ip=req.source_ip,
                    device=req.device_cn or "",
                    user=user_email or "",
                )
                entries = (
                    self.pip_get_context(user_email, condition.cap, condition.ctx_type)
                    if user_email
                    else None
                )
                present = entries is not None and key in entries
                value = entries.get(key) if present else None
                ok = present and value == condition.equals
                consulted.append(
                    {
                        "cap": condition.cap,
                        "ctx_type": condition.ctx_type,
                        "key": key,
                        "required": condition.equals,
                        "present": present,
                        "value": value,
                        "satisfied": ok,
                    }
                )
                if not ok:
                    satisfied = False
                    reasons.append(
                        f"{rule.name}: {key} "
                        + ("absent" if not present else f"= {value!r}, wanted {condition.equals!r}")
                    )
            if satisfied:
                return rule.effect, rule.name
        reasons.append("default-deny")
        return self.policy.default, None

    def _emit_observations(self, req: AccessRequest, user_email: str) -> None:
        for target in self.observe_targets:
            try:
                target.client.observe(
                    user_email,
                    target.ctx_type,
                    {"device": req.device_cn or "", "ip": req.source_ip},
                )
            except Exception:
                pass  # observation transport failure never blocks the decision
