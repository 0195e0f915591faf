"""Declarative federation topology.

The default topology mirrors the evaluation setup: two relying parties in
different identity federations (RP1 with IdP1/IdP2, RP2 with IdP3), three
context providers (device location fed by the RPs and aggregating the
wifi provider, device health fed by device agents, wifi environment), and
one authorization server. Arbitrary topologies load from JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

AUTHZ = "https://authz.example"
IDP1 = "https://idp1.example"
IDP2 = "https://idp2.example"
IDP3 = "https://idp3.example"
CAP1 = "https://cap1.example"
CAP2 = "https://cap2.example"
CAP3 = "https://cap3.example"
RP1 = "https://rp1.example"
RP2 = "https://rp2.example"

DEVICE_LOCATION = f"{CAP1}/ctxtype/device-location"
DEVICE_HEALTH = f"{CAP2}/ctxtype/device-health"
ENVIRONMENT = f"{CAP3}/ctxtype/environment"

ALICE = "alice@example.com"
BOB = "bob@example.com"
LAPTOP = "alice-no-Laptop"

AGENT_SOURCE = "agent://device"
WIFI_SOURCE = "wifi://controller"


@dataclass
class ServedTypeSpec:
    ctx_type: str
    scopes: list[str]
    derivation: str
    vocabulary: list[str]


@dataclass
class UpstreamSpec:
    upstream_cap: str
    upstream_ctx_type: str
    fold_into: str
    scopes: list[str]


@dataclass
class CapSpec:
    issuer: str
    served: list[ServedTypeSpec]
    sources: list[str]
    upstreams: list[UpstreamSpec] = field(default_factory=list)
    latest_version: str = "1.0.0"
    wifi_whitelist: list[str] = field(default_factory=list)


@dataclass
class RpSpec:
    uri: str
    trusted_issuers: list[str]
    policy: dict[str, Any]
    observes: list[dict[str, str]] = field(default_factory=list)  # {cap, ctx_type}
    consumes: list[dict[str, Any]] = field(default_factory=list)  # {cap, ctx_type, scopes}


@dataclass
class IdpAccountSpec:
    issuer: str
    user: str
    credential: str


@dataclass
class TopologySpec:
    authz_uri: str = AUTHZ
    idp_issuers: list[str] = field(default_factory=lambda: [IDP1, IDP2, IDP3])
    idp_accounts: list[IdpAccountSpec] = field(default_factory=list)
    caps: list[CapSpec] = field(default_factory=list)
    rps: list[RpSpec] = field(default_factory=list)
    users: dict[str, str] = field(default_factory=dict)
    entity_secrets: dict[str, str] = field(default_factory=dict)
    source_secrets: dict[str, dict[str, str]] = field(default_factory=dict)
    idf_membership: dict[str, list[str]] = field(default_factory=dict)
    fixed_ports: dict[str, int] = field(default_factory=dict)

    def cap(self, issuer: str) -> CapSpec:
        for spec in self.caps:
            if spec.issuer == issuer:
                return spec
        raise KeyError(issuer)

    def rp(self, uri: str) -> RpSpec:
        for spec in self.rps:
            if spec.uri == uri:
                return spec
        raise KeyError(uri)

    def to_json(self) -> dict[str, Any]:
        def plain(obj):
            if isinstance(obj, list):
                return [plain(x) for x in obj]
            if hasattr(obj, "__dataclass_fields__"):
                return {k: plain(v) for k, v in vars(obj).items()}
            return obj

        return {k: plain(v) for k, v in vars(self).items()}

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "TopologySpec":
        return cls(
            authz_uri=doc.get("authz_uri", AUTHZ),
            idp_issuers=list(doc.get("idp_issuers", [])),
            idp_accounts=[IdpAccountSpec(**a) for a in doc.get("idp_accounts", [])],
            caps=[
                CapSpec(
                    issuer=c["issuer"],
                    served=[ServedTypeSpec(**s) for s in c.get("served", [])],
                    sources=list(c.get("sources", [])),
                    upstreams=[UpstreamSpec(**u) for u in c.get("upstreams", [])],
                    latest_version=c.get("latest_version", "1.0.0"),
                    wifi_whitelist=list(c.get("wifi_whitelist", [])),
                )
                for c in doc.get("caps", [])
            ],
            rps=[
                RpSpec(
                    uri=r["uri"],
                    trusted_issuers=list(r.get("trusted_issuers", [])),
                    policy=dict(r.get("policy", {})),
                    observes=list(r.get("observes", [])),
                    consumes=list(r.get("consumes", [])),
                )
                for r in doc.get("rps", [])
            ],
            users=dict(doc.get("users", {})),
            entity_secrets=dict(doc.get("entity_secrets", {})),
            source_secrets={
                k: dict(v) for k, v in doc.get("source_secrets", {}).items()
            },
            idf_membership={
                k: list(v) for k, v in doc.get("idf_membership", {}).items()
            },
            fixed_ports=dict(doc.get("fixed_ports", {})),
        )

    @classmethod
    def load(cls, path: str | Path) -> "TopologySpec":
        return cls.from_json(json.loads(Path(path).read_text()))


KNOWN_NETWORK_POLICY = {
    "default": "deny",
    "rules": [
        {
            "name": "known-network",
            "effect": "allow",
            "require_identity": True,
            "conditions": [
                {
                    "cap": CAP1,
                    "ctx_type": DEVICE_LOCATION,
                    "key": "used:ip:{source_ip}",
                    "equals": True,
                }
            ],
        }
    ],
}

DEVICE_HEALTH_POLICY = {
    "default": "deny",
    "rules": [
        {
            "name": "healthy-device",
            "effect": "allow",
            "require_identity": True,
            "conditions": [
                {
                    "cap": CAP2,
                    "ctx_type": DEVICE_HEALTH,
                    "key": "up-to-date:{device}",
                    "equals": True,
                }
            ],
        }
    ],
}

IDENTITY_ONLY_POLICY = {
    "default": "deny",
    "rules": [
        {"name": "authenticated", "effect": "allow", "require_identity": True}
    ],
}

HEALTH_AND_NETWORK_POLICY = {
    "default": "deny",
    "rules": [
        {
            "name": "trusted-device-and-network",
            "effect": "allow",
            "require_identity": True,
            "conditions": [
                {
                    "cap": CAP2,
                    "ctx_type": DEVICE_HEALTH,
                    "key": "up-to-date:{device}",
                    "equals": True,
                },
                {
                    "cap": CAP1,
                    "ctx_type": DEVICE_LOCATION,
                    "key": "used:ip:{source_ip}",
                    "equals": True,
                },
            ],
        }
    ],
}


def default_topology(
    rp1_policy: Optional[dict] = None, rp2_policy: Optional[dict] = None
) -> TopologySpec:
    """The evaluation topology; scenario runners override the RP policies."""
    return TopologySpec(
        authz_uri=AUTHZ,
        idp_issuers=[IDP1, IDP2, IDP3],
        idf_membership={"IdF1": [IDP1, IDP2], "IdF2": [IDP3]},
        idp_accounts=[
            IdpAccountSpec(IDP1, ALICE, "alice-pw-idp1"),
            IdpAccountSpec(IDP2, ALICE, "alice-pw-idp2"),
            IdpAccountSpec(IDP3, ALICE, "alice-pw-idp3"),
            IdpAccountSpec(IDP1, BOB, "bob-pw-idp1"),
            IdpAccountSpec(IDP3, BOB, "bob-pw-idp3"),
        ],
        caps=[
            CapSpec(
                issuer=CAP1,
                served=[
                    ServedTypeSpec(
                        ctx_type=DEVICE_LOCATION,
                        scopes=["ip", "used:ip", "wifi-ap"],
                        derivation="device-location",
                        vocabulary=["device", "ip"],
                    )
                ],
                sources=[RP1, RP2, CAP3],
                upstreams=[
                    UpstreamSpec(
                        upstream_cap=CAP3,
                        upstream_ctx_type=ENVIRONMENT,
                        fold_into=DEVICE_LOCATION,
                        scopes=["wifi-ap"],
                    )
                ],
            ),
            CapSpec(
                issuer=CAP2,
                served=[
                    ServedTypeSpec(
                        ctx_type=DEVICE_HEALTH,
                        scopes=["up-to-date", "version"],
                        derivation="device-health",
                        vocabulary=["device", "version"],
                    )
                ],
                sources=[AGENT_SOURCE],
                latest_version="1.3.0",
            ),
            CapSpec(
                issuer=CAP3,
                served=[
                    ServedTypeSpec(
                        ctx_type=ENVIRONMENT,
                        scopes=["wifi-ap"],
                        derivation="environment",
                        vocabulary=["device", "wifi_ap"],
                    )
                ],
                sources=[WIFI_SOURCE],
                wifi_whitelist=["ap-campus-1", "ap-lab-2"],
            ),
        ],
        rps=[
            RpSpec(
                uri=RP1,
                trusted_issuers=[IDP1, IDP2],
                policy=rp1_policy or KNOWN_NETWORK_POLICY,
                observes=[{"cap": CAP1, "ctx_type": DEVICE_LOCATION}],
                consumes=[
                    {"cap": CAP1, "ctx_type": DEVICE_LOCATION, "scopes": ["used:ip"]}
                ],
            ),
            RpSpec(
                uri=RP2,
                trusted_issuers=[IDP3],
                policy=rp2_policy or DEVICE_HEALTH_POLICY,
                observes=[{"cap": CAP1, "ctx_type": DEVICE_LOCATION}],
                consumes=[
                    {"cap": CAP2, "ctx_type": DEVICE_HEALTH, "scopes": ["up-to-date"]},
                    {"cap": CAP1, "ctx_type": DEVICE_LOCATION, "scopes": ["used:ip"]},
                ],
            ),
        ],
        users={ALICE: "alice-login", BOB: "bob-login"},
        entity_secrets={
            RP1: "secret-rp1",
            RP2: "secret-rp2",
            CAP1: "secret-cap1",
            CAP2: "secret-cap2",
            CAP3: "secret-cap3",
        },
        source_secrets={
            CAP1: {RP1: "obs-rp1", RP2: "obs-rp2", CAP3: "obs-cap3"},
            CAP2: {AGENT_SOURCE: "obs-agent"},
            CAP3: {WIFI_SOURCE: "obs-wifi"},
        },
    )
