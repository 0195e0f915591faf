"""Requesting-party side of the grant flow, shared by relying parties and
by context providers subscribing to an upstream provider.

The flow (request without a token, receive a ticket challenge, trade the
ticket plus claims for a requesting-party token, re-request) is recorded
as an ordered step trace; server-side steps arrive in-band in each
response so the recorded trace reflects what actually happened:

     1  subject of the access identified
     2  context type and scopes determined
     3  context requested without authorization
     4  resource server obtained a permission ticket
     5  ticket challenge returned
     6  grant requested with the ticket and the requester's claims
     7  policy evaluated
     8  requesting-party token issued
     9  context re-requested with the token
    10  token introspected by the resource server
    11  scoped context provided
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .clients import AuthzClient, CapClient, ContextDelivery, TicketChallenge


@dataclass
class AcquireResult:
    denied: bool
    rpt: Optional[str] = None
    grants: list[dict[str, Any]] = field(default_factory=list)
    set_token: Optional[str] = None
    reason: Optional[str] = None
    trace: list[str] = field(default_factory=list)


def acquire_context_access(
    cap: CapClient,
    authz: AuthzClient,
    requesting_party: str,
    subject_email: str,
    ctx_id: str,
    scopes: Iterable[str],
    attestations: dict[str, Any] | None = None,
) -> AcquireResult:
    """Run the full challenge/ticket/grant/re-request exchange for one
    context resource, returning the granted token and the step trace."""
    scopes = sorted(scopes)
    trace = [
        f"1:subject-identified:{subject_email}",
        f"2:context-needs-determined:{ctx_id}:{','.join(scopes)}",
        "3:context-requested",
    ]

    first = cap.request_context(ctx_id, scopes, rpt=None)
    if isinstance(first, ContextDelivery):
        # Resource server already considers us authorized; nothing to acquire.
        trace.extend(first.trace)
        return AcquireResult(denied=False, set_token=first.set_token, trace=trace)
    assert isinstance(first, TicketChallenge)
    trace.extend(first.trace)

    trace.append("6:grant-requested-with-claims")
    outcome = authz.grant_rpt(
        first.ticket, requesting_party, dict(attestations or {})
    )
    trace.extend(outcome.trace)
    if outcome.denied:
        trace.append("deny:policy")
        return AcquireResult(denied=True, reason=outcome.reason, trace=trace)

    trace.append("9:context-re-requested")
    second = cap.request_context(ctx_id, scopes, rpt=outcome.rpt)
    if isinstance(second, TicketChallenge):
        # Grant raced a revocation; surface it as a denial with the evidence.
        trace.extend(second.trace)
        trace.append("deny:token-not-accepted")
        return AcquireResult(denied=True, reason="token not accepted", trace=trace)
    trace.extend(second.trace)

    return AcquireResult(
        denied=False,
        rpt=outcome.rpt,
        grants=outcome.grants,
        set_token=second.set_token,
        trace=trace,
    )
