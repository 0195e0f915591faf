"""Post-run audit: no delivered event may exceed the receiver's grants.

Independently of the providers' own filtering path, this reconstructs
resources and grants from the authorization server's event log, then
checks every entry of every token that reached any receiver (relying
parties' inboxes and providers' upstream inboxes) against the scopes that
receiver was ever granted for that resource.
"""

from __future__ import annotations

from typing import Any

from ..codec import peek_claims
from ..model import Scope, scope_of_key


def collect_deliveries(fed) -> list[dict[str, Any]]:
    deliveries: list[dict[str, Any]] = []
    for rp in fed.rps.values():
        for entry in rp.delivery_log:
            deliveries.append(dict(entry, receiver=rp.uri))
    for cap in fed.caps.values():
        for entry in cap.upstream_inbox:
            claims = peek_claims(entry["token"])
            for type_uri, body in claims.get("events", {}).items():
                event = dict(body)
                subject = event.pop("subject", {})
                deliveries.append(
                    {
                        "receiver": cap.issuer,
                        "iss": claims["iss"],
                        "jti": claims["jti"],
                        "ctx_type": type_uri,
                        "subject": subject.get("user", {}).get("email", ""),
                        "entries": event,
                        "token": entry["token"],
                        "origin": entry.get("origin", "stream-push"),
                    }
                )
    return deliveries


def audit_scope_confinement(fed) -> dict[str, Any]:
    resources: dict[tuple[str, str, str], dict[str, Any]] = {}
    by_ctx_id: dict[str, dict[str, Any]] = {}
    allowed: dict[tuple[str, str], set[str]] = {}

    for event in fed.authz.log:
        if event["op"] == "register":
            record = {
                "ctx_id": event["ctx_id"],
                "owner": event["owner"],
                "cap": event["cap"],
                "ctx_type": event["ctx_type"],
                "scopes": frozenset(Scope(s) for s in event["scopes"]),
            }
            resources[(event["owner"], event["cap"], event["ctx_type"])] = record
            by_ctx_id[event["ctx_id"]] = record
        elif event["op"] == "grant":
            party = event["requesting_party"]
            for ctx_id, scopes in event["grants"]:
                allowed.setdefault((party, ctx_id), set()).update(scopes)

    deliveries = collect_deliveries(fed)
    violations: list[dict[str, Any]] = []
    checked_entries = 0
    for delivery in deliveries:
        record = resources.get(
            (delivery["subject"], delivery["iss"], delivery["ctx_type"])
        )
        if record is None:
            violations.append(
                dict(delivery, problem="delivery for an unregistered resource")
            )
            continue
        granted = allowed.get((delivery["receiver"], record["ctx_id"]), set())
        for key in delivery["entries"]:
            checked_entries += 1
            scope = scope_of_key(key, record["scopes"])
            if scope is None or scope.name not in granted:
                violations.append(
                    {
                        "receiver": delivery["receiver"],
                        "ctx_id": record["ctx_id"],
                        "key": key,
                        "scope": scope.name if scope else None,
                        "granted": sorted(granted),
                        "problem": "entry outside granted scopes",
                    }
                )
    return {
        "deliveries": len(deliveries),
        "checked_entries": checked_entries,
        "violations": violations,
    }
