"""User authorization server: the single place context sharing is decided.

Context providers register the resources they hold for a user (after the
user consented via a protection token); requesting parties exchange a
single-use permission ticket plus their claims for a requesting-party
token whose grants are exactly the intersection of the user's policy with
the requested scopes. Deny by default: no rule, no grant.

Policy edits apply to new grants immediately; outstanding tokens that now
exceed policy are revoked by the sweep, which runs lazily once per
configured interval and may be forced by the harness. Revocation is
monotone: a token reported inactive never becomes active again.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional

from .clock import Clock, SystemClock
from .ids import IdFactory
from .model import ContextType, Scope, SubjectId


class ConsentAbsent(Exception):
    """No approval on record for this (cap, owner) pair."""

    def __init__(self, message: str, prompt_id: str | None = None):
        super().__init__(message)
        self.prompt_id = prompt_id


class UnknownCap(Exception):
    pass


class InvalidPAT(Exception):
    pass


class EmptyScopes(Exception):
    pass


class UnknownResource(Exception):
    pass


class ScopeNotDeclared(Exception):
    pass


class TicketExpired(Exception):
    pass


class TicketConsumed(Exception):
    pass


class UnknownContextType(Exception):
    pass


@dataclass
class ConsentPrompt:
    prompt_id: str
    cap: str
    owner: str
    status: str = "pending"  # pending | approved | rejected


@dataclass
class PatRecord:
    token: str
    cap: str
    owner: str
    issued_at: float
    consent_prompt: Optional[str] = None
    revoked: bool = False


@dataclass
class ResourceRecord:
    ctx_id: str
    owner: str
    cap: str
    ctx_type: str
    scopes: frozenset[str]


@dataclass
class TicketRecord:
    ticket: str
    cap: str
    requested: list[tuple[str, frozenset[str]]]
    created_at: float
    consumed: bool = False


@dataclass
class RptRecord:
    token: str
    requesting_party: str
    grants: list[tuple[str, frozenset[str]]]
    issued_at: float
    expires_at: float
    revoked: bool = False


@dataclass
class GrantDenied:
    """Policy outcome, not an error: nothing the requester asked for is allowed."""

    reason: str


@dataclass(frozen=True)
class ClaimsDocument:
    requesting_party: str
    attestations: Mapping[str, Any] = field(default_factory=dict)


@dataclass
class PolicyRule:
    requesting_party: str
    ctx_type: str
    scopes: frozenset[str]


class AuthorizationServer:
    def __init__(
        self,
        *,
        clock: Clock | None = None,
        ids: IdFactory | None = None,
        auto_approve_consent: bool = False,
        known_caps: Iterable[str] = (),
        ticket_ttl: float = 120.0,
        rpt_ttl: float = 3600.0,
        sweep_interval: float = 10.0,
    ):
        self.clock = clock or SystemClock()
        self.ids = ids or IdFactory()
        self.auto_approve_consent = auto_approve_consent
        self.known_caps = set(known_caps)
        self.ticket_ttl = ticket_ttl
        self.rpt_ttl = rpt_ttl
        self.sweep_interval = sweep_interval

        self._lock = threading.RLock()
        self._prompts: dict[str, ConsentPrompt] = {}
        self._consented: set[tuple[str, str]] = set()
        self._pats: dict[str, PatRecord] = {}
        self._pat_index: dict[tuple[str, str], str] = {}
        self._resources: dict[str, ResourceRecord] = {}
        self._resource_index: dict[tuple[str, str, str], str] = {}
        self._tickets: dict[str, TicketRecord] = {}
        self._rpts: dict[str, RptRecord] = {}
        self._policies: dict[str, dict[tuple[str, str], frozenset[str]]] = {}
        self._last_sweep = self.clock.now()
        self.log: list[dict[str, Any]] = []

    # -- consent and protection tokens ------------------------------------

    def _record(self, op: str, **detail: Any) -> None:
        self.log.append({"op": op, "at": self.clock.now(), **detail})

    def pending_prompts(self, owner: str) -> list[ConsentPrompt]:
        with self._lock:
            return [p for p in self._prompts.values() if p.owner == owner]

    def respond_consent(self, prompt_id: str, approve: bool) -> ConsentPrompt:
        with self._lock:
            prompt = self._prompts.get(prompt_id)
            if prompt is None:
                raise KeyError(f"unknown consent prompt {prompt_id!r}")
            if prompt.status != "pending":
                return prompt  # double-respond is a no-op
            prompt.status = "approved" if approve else "rejected"
            if approve:
                self._consented.add((prompt.cap, prompt.owner))
            self._record(
                "consent", cap=prompt.cap, owner=prompt.owner, approved=approve
            )
            return prompt

    def issue_pat(self, cap: str, owner: str) -> PatRecord:
        """Protection token for one (cap, owner) pair; re-issue revokes the old."""
        with self._lock:
            if self.known_caps and cap not in self.known_caps:
                raise UnknownCap(cap)
            if (cap, owner) not in self._consented:
                if self.auto_approve_consent:
                    self._consented.add((cap, owner))
                    self._record("consent", cap=cap, owner=owner, approved=True)
                else:
                    prompt = self._find_or_create_prompt(cap, owner)
                    raise ConsentAbsent(
                        f"no consent on record for {cap} / {owner}",
                        prompt_id=prompt.prompt_id,
                    )
            previous = self._pat_index.get((cap, owner))
            if previous is not None:
                self._pats[previous].revoked = True
            record = PatRecord(
                token=self.ids.new_secret("pat"),
                cap=cap,
                owner=owner,
                issued_at=self.clock.now(),
            )
            self._pats[record.token] = record
            self._pat_index[(cap, owner)] = record.token
            self._record("issue_pat", cap=cap, owner=owner, token=record.token)
            return record

    def _find_or_create_prompt(self, cap: str, owner: str) -> ConsentPrompt:
        for prompt in self._prompts.values():
            if prompt.cap == cap and prompt.owner == owner and prompt.status == "pending":
                return prompt
        prompt = ConsentPrompt(
            prompt_id=self.ids.new_id("consent"), cap=cap, owner=owner
        )
        self._prompts[prompt.prompt_id] = prompt
        return prompt

    def validate_pat(self, token: str) -> PatRecord:
        record = self._pats.get(token)
        if record is None or record.revoked:
            raise InvalidPAT("protection token unknown or revoked")
        return record

    # -- resource registration ---------------------------------------------

    def register_resource(
        self, pat_token: str, ctx_type: ContextType, scopes: frozenset[Scope]
    ) -> str:
        with self._lock:
            pat = self.validate_pat(pat_token)
            if not scopes:
                raise EmptyScopes("a resource must declare at least one scope")
            key = (pat.owner, pat.cap, ctx_type.uri)
            existing = self._resource_index.get(key)
            if existing is not None:
                return existing
            ctx_id = self.ids.new_id("ctx")
            self._resources[ctx_id] = ResourceRecord(
                ctx_id=ctx_id,
                owner=pat.owner,
                cap=pat.cap,
                ctx_type=ctx_type.uri,
                scopes=frozenset(s.name for s in scopes),
            )
            self._resource_index[key] = ctx_id
            self._record(
                "register",
                ctx_id=ctx_id,
                owner=pat.owner,
                cap=pat.cap,
                ctx_type=ctx_type.uri,
                scopes=sorted(s.name for s in scopes),
            )
            return ctx_id

    def resource(self, ctx_id: str) -> ResourceRecord:
        with self._lock:
            record = self._resources.get(ctx_id)
            if record is None:
                raise UnknownResource(ctx_id)
            return record

    # -- permission tickets and grants --------------------------------------

    def issue_permission_ticket(
        self, cap: str, ctx_id: str, requested_scopes: frozenset[str]
    ) -> TicketRecord:
        with self._lock:
            record = self._resources.get(ctx_id)
            if record is None or record.cap != cap:
                raise UnknownResource(ctx_id)
            undeclared = requested_scopes - record.scopes
            if undeclared:
                raise ScopeNotDeclared(", ".join(sorted(undeclared)))
            ticket = TicketRecord(
                ticket=self.ids.new_secret("ticket"),
                cap=cap,
                requested=[(ctx_id, frozenset(requested_scopes))],
                created_at=self.clock.now(),
            )
            self._tickets[ticket.ticket] = ticket
            self._record(
                "ticket",
                ticket=ticket.ticket,
                ctx_id=ctx_id,
                scopes=sorted(requested_scopes),
            )
            return ticket

    def grant_rpt(
        self, ticket_token: str, claims: ClaimsDocument
    ) -> RptRecord | GrantDenied:
        """Consume the ticket, evaluate the owner's policy, grant or deny."""
        with self._lock:
            ticket = self._tickets.get(ticket_token)
            if ticket is None:
                raise TicketConsumed("unknown or already used ticket")
            if self.clock.now() > ticket.created_at + self.ticket_ttl:
                raise TicketExpired(ticket_token)
            if ticket.consumed:
                raise TicketConsumed(ticket_token)
            ticket.consumed = True

            grants: list[tuple[str, frozenset[str]]] = []
            for ctx_id, requested in ticket.requested:
                resource = self._resources[ctx_id]
                rules = self._policies.get(resource.owner, {})
                allowed = rules.get((claims.requesting_party, resource.ctx_type))
                if allowed is None:
                    continue
                granted = allowed & requested
                if granted:
                    grants.append((ctx_id, granted))

            if not grants:
                self._record(
                    "deny",
                    ticket=ticket_token,
                    requesting_party=claims.requesting_party,
                )
                return GrantDenied("policy grants none of the requested scopes")

            now = self.clock.now()
            rpt = RptRecord(
                token=self.ids.new_secret("rpt"),
                requesting_party=claims.requesting_party,
                grants=grants,
                issued_at=now,
                expires_at=now + self.rpt_ttl,
            )
            self._rpts[rpt.token] = rpt
            self._record(
                "grant",
                token=rpt.token,
                ticket=ticket_token,
                requesting_party=claims.requesting_party,
                grants=[(c, sorted(s)) for c, s in grants],
                attestations=dict(claims.attestations),
            )
            return rpt

    def introspect(self, token: str) -> dict[str, Any]:
        with self._lock:
            self._maybe_sweep()
            rpt = self._rpts.get(token)
            if rpt is not None:
                active = not rpt.revoked and self.clock.now() < rpt.expires_at
                if not active:
                    return {"active": False}
                owners = {self._resources[c].owner for c, _ in rpt.grants}
                return {
                    "active": True,
                    "requesting_party": rpt.requesting_party,
                    "grants": [
                        {"ctx_id": c, "scopes": sorted(s)} for c, s in rpt.grants
                    ],
                    "owner": owners.pop() if len(owners) == 1 else sorted(owners),
                }
            pat = self._pats.get(token)
            if pat is not None and not pat.revoked:
                return {
                    "active": True,
                    "requesting_party": pat.cap,
                    "grants": [],
                    "owner": pat.owner,
                }
            return {"active": False}

    # -- policy --------------------------------------------------------------

    def set_policy(
        self,
        owner: str,
        requesting_party: str,
        ctx_type: ContextType,
        scopes: frozenset[str],
    ) -> list[PolicyRule]:
        with self._lock:
            if not self._owner_has_type(owner, ctx_type.uri):
                raise UnknownContextType(ctx_type.uri)
            rules = self._policies.setdefault(owner, {})
            rules[(requesting_party, ctx_type.uri)] = frozenset(scopes)
            self._record(
                "policy_set",
                owner=owner,
                requesting_party=requesting_party,
                ctx_type=ctx_type.uri,
                scopes=sorted(scopes),
            )
            return self.policy_rules(owner)

    def remove_policy(
        self, owner: str, requesting_party: str, ctx_type: ContextType
    ) -> list[PolicyRule]:
        with self._lock:
            rules = self._policies.get(owner, {})
            rules.pop((requesting_party, ctx_type.uri), None)
            self._record(
                "policy_removed",
                owner=owner,
                requesting_party=requesting_party,
                ctx_type=ctx_type.uri,
            )
            return self.policy_rules(owner)

    def policy_rules(self, owner: str) -> list[PolicyRule]:
        with self._lock:
            return [
                PolicyRule(requesting_party=rp, ctx_type=t, scopes=s)
                for (rp, t), s in self._policies.get(owner, {}).items()
            ]

    def _owner_has_type(self, owner: str, type_uri: str) -> bool:
        return any(
            r.owner == owner and r.ctx_type == type_uri
            for r in self._resources.values()
        )

    # -- revocation ------------------------------------------------------------

    def revocation_sweep(self) -> int:
        """Revoke outstanding RPTs whose grants exceed the current policy."""
        with self._lock:
            revoked = 0
            for rpt in self._rpts.values():
                if rpt.revoked:
                    continue
                for ctx_id, scopes in rpt.grants:
                    resource = self._resources[ctx_id]
                    allowed = self._policies.get(resource.owner, {}).get(
                        (rpt.requesting_party, resource.ctx_type), frozenset()
                    )
                    if not scopes <= allowed:
                        rpt.revoked = True
                        revoked += 1
                        break
            self._last_sweep = self.clock.now()
            if revoked:
                self._record("sweep", revoked=revoked)
            return revoked

    def _maybe_sweep(self) -> None:
        if self.clock.now() - self._last_sweep >= self.sweep_interval:
            self.revocation_sweep()

    # -- owner views -------------------------------------------------------------

    def list_resources(self, owner: str) -> list[dict[str, Any]]:
        with self._lock:
            return [
                {
                    "ctx_id": r.ctx_id,
                    "ctx_type": r.ctx_type,
                    "cap_origin": r.cap,
                    "scopes": sorted(r.scopes),
                }
                for r in self._resources.values()
                if r.owner == owner
            ]

    def list_shares(self, owner: str, ctx_id: str) -> list[dict[str, Any]]:
        with self._lock:
            resource = self._resources.get(ctx_id)
            if resource is None or resource.owner != owner:
                return []
            return [
                {"requesting_party": rp, "scopes": sorted(scopes)}
                for (rp, type_uri), scopes in self._policies.get(owner, {}).items()
                if type_uri == resource.ctx_type
            ]
