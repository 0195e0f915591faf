"""Service APIs exercised through the ASGI test client (no sockets)."""

import pytest
from fastapi.testclient import TestClient

from ztf.api import create_authz_app, create_cap_app, create_idp_app, create_rp_app
from ztf.authz import AuthorizationServer
from ztf.cap import CapConfig, ContextProvider, ServedType
from ztf.clients import LocalAuthzClient, LocalPushFabric
from ztf.clock import SimulatedClock
from ztf.codec import KeyRing, peek_claims
from ztf.idp import IdentityProvider, IdpAccount
from ztf.ids import IdFactory
from ztf.model import ContextType, Scope
from ztf.rp import DecisionPolicy, RelyingParty

AUTHZ = "https://authz.example"
CAP1 = "https://cap1.example"
RP1 = "https://rp1.example"
IDP1 = "https://idp1.example"
ALICE = "alice@example.com"
LOCATION = f"{CAP1}/ctxtype/device-location"

USERS = {ALICE: "alice-login"}
ENTITIES = {RP1: "rp1-secret", CAP1: "cap1-secret"}
SOURCES = {RP1: "obs-rp1"}


@pytest.fixture()
def world():
    clock = SimulatedClock()
    ids = IdFactory(seed=17)
    keyring = KeyRing()
    keyring.generate_issuer(CAP1, seed=b"\x41" * 32)
    keyring.generate_issuer(IDP1, seed=b"\x42" * 32)
    fabric = LocalPushFabric()

    authz = AuthorizationServer(
        clock=clock, ids=ids, auto_approve_consent=True, known_caps=[CAP1]
    )
    provider = ContextProvider(
        CapConfig(
            issuer=CAP1,
            served=(
                ServedType(
                    ContextType(LOCATION),
                    frozenset({Scope("ip"), Scope("used:ip"), Scope("wifi-ap")}),
                    "device-location",
                    frozenset({"device", "ip"}),
                ),
            ),
            known_sources=frozenset({RP1}),
        ),
        keyring=keyring,
        authz=LocalAuthzClient(authz),
        pusher=fabric.push,
        clock=clock,
        ids=ids,
    )
    idp = IdentityProvider(
        {IDP1},
        [IdpAccount(IDP1, ALICE, "pw")],
        keyring,
        clock=clock,
        ids=ids,
    )
    rp = RelyingParty(
        RP1,
        trusted_issuers={IDP1},
        keyring=keyring.public_view(),
        policy=DecisionPolicy(),
        authz=LocalAuthzClient(authz),
        clock=clock,
        ids=ids,
    )
    fabric.register(f"{RP1}/ctx-recv", rp.receive_push)

    return {
        "authz": TestClient(
            create_authz_app(authz, user_accounts=USERS, entity_secrets=ENTITIES)
        ),
        "cap": TestClient(
            create_cap_app(
                provider,
                source_secrets=SOURCES,
                entity_secrets=ENTITIES,
                user_accounts=USERS,
            )
        ),
        "idp": TestClient(create_idp_app(idp)),
        "rp": TestClient(create_rp_app(rp)),
        "core": {
            "authz": authz,
            "provider": provider,
            "rp": rp,
            "keyring": keyring,
            "clock": clock,
        },
    }


def owner_headers(world):
    response = world["authz"].post(
        "/login", json={"user": ALICE, "secret": "alice-login"}
    )
    assert response.status_code == 200
    return {"Authorization": f"Bearer {response.json()['session']}"}


def cap_entity_headers():
    return {"X-Entity": CAP1, "X-Entity-Secret": "cap1-secret"}


def rp_entity_headers():
    return {"X-Entity": RP1, "X-Entity-Secret": "rp1-secret"}


class TestAuthzApi:
    def test_login_rejects_bad_secret(self, world):
        response = world["authz"].post("/login", json={"user": ALICE, "secret": "no"})
        assert response.status_code == 401

    def test_pat_requires_matching_entity(self, world):
        response = world["authz"].post(
            "/pat",
            json={"cap": CAP1, "owner": ALICE},
            headers=rp_entity_headers(),
        )
        assert response.status_code == 403

    def test_protection_flow_over_http(self, world):
        authz = world["authz"]
        pat = authz.post(
            "/pat", json={"cap": CAP1, "owner": ALICE}, headers=cap_entity_headers()
        ).json()["pat"]
        created = authz.post(
            "/resource",
            json={"ctx_type": LOCATION, "scopes": ["ip", "used:ip"]},
            headers={"Authorization": f"Bearer {pat}"},
        )
        assert created.status_code == 200
        ctx_id = created.json()["ctx_id"]

        headers = owner_headers(world)
        listed = authz.get("/resources", headers=headers).json()["resources"]
        assert listed == [
            {
                "ctx_id": ctx_id,
                "ctx_type": LOCATION,
                "cap_origin": CAP1,
                "scopes": ["ip", "used:ip"],
            }
        ]

        set_rule = authz.post(
            "/policy",
            json={"requesting_party": RP1, "ctx_type": LOCATION, "scopes": ["used:ip"]},
            headers=headers,
        )
        assert set_rule.status_code == 200

        ticket = authz.post(
            "/permission",
            json={"ctx_id": ctx_id, "scopes": ["used:ip"]},
            headers={"Authorization": f"Bearer {pat}"},
        ).json()["ticket"]
        granted = authz.post(
            "/token",
            json={"ticket": ticket, "claims": {"requesting_party": RP1}},
            headers=rp_entity_headers(),
        )
        assert granted.status_code == 200
        body = granted.json()
        assert body["grants"] == [{"ctx_id": ctx_id, "scopes": ["used:ip"]}]

        info = authz.post("/introspect", json={"token": body["rpt"]}).json()
        assert info["active"] is True

        shares = authz.get(
            "/shares", params={"ctx_id": ctx_id}, headers=headers
        ).json()["shares"]
        assert shares == [{"requesting_party": RP1, "scopes": ["used:ip"]}]

    def test_denial_returns_403_with_reason(self, world):
        authz = world["authz"]
        pat = authz.post(
            "/pat", json={"cap": CAP1, "owner": ALICE}, headers=cap_entity_headers()
        ).json()["pat"]
        ctx_id = authz.post(
            "/resource",
            json={"ctx_type": LOCATION, "scopes": ["used:ip"]},
            headers={"Authorization": f"Bearer {pat}"},
        ).json()["ctx_id"]
        ticket = authz.post(
            "/permission",
            json={"ctx_id": ctx_id, "scopes": ["used:ip"]},
            headers={"Authorization": f"Bearer {pat}"},
        ).json()["ticket"]
        denied = authz.post(
            "/token",
            json={"ticket": ticket, "claims": {"requesting_party": RP1}},
            headers=rp_entity_headers(),
        )
        assert denied.status_code == 403
        assert denied.json()["denied"] is True

    def test_claimed_party_must_match_caller(self, world):
        response = world["authz"].post(
            "/token",
            json={"ticket": "t", "claims": {"requesting_party": "https://other"}},
            headers=rp_entity_headers(),
        )
        assert response.status_code == 403

    def test_consent_endpoints_gate_pat(self, world):
        core = world["core"]["authz"]
        core.auto_approve_consent = False
        authz = world["authz"]
        refused = authz.post(
            "/pat",
            json={"cap": CAP1, "owner": ALICE},
            headers=cap_entity_headers(),
        )
        assert refused.status_code == 403
        prompt_id = refused.json()["prompt_id"]

        headers = owner_headers(world)
        prompts = authz.get("/consent", headers=headers).json()["prompts"]
        assert prompts[0]["prompt_id"] == prompt_id

        approved = authz.post(
            f"/consent/{prompt_id}", json={"approve": True}, headers=headers
        )
        assert approved.json()["status"] == "approved"

        issued = authz.post(
            "/pat", json={"cap": CAP1, "owner": ALICE}, headers=cap_entity_headers()
        )
        assert issued.status_code == 200

    def test_unknown_errors_mapped(self, world):
        response = world["authz"].post(
            "/introspect", json={"token": "nothing"}
        )
        assert response.json() == {"active": False}


class TestCapApi:
    def bootstrap(self, world):
        response = world["cap"].post("/bootstrap", json={"owner": ALICE})
        return response.json()["ctx_ids"][LOCATION]

    def test_observe_requires_source_credential(self, world):
        response = world["cap"].post(
            "/observe",
            json={"subject": ALICE, "ctx_type": LOCATION, "payload": {}},
        )
        assert response.status_code == 401

    def test_observe_and_ctx_id_fetch(self, world):
        ctx_id = self.bootstrap(world)
        response = world["cap"].post(
            "/observe",
            json={
                "subject": ALICE,
                "ctx_type": LOCATION,
                "payload": {"device": "laptop", "ip": "192.0.2.1"},
                "device": "laptop",
            },
            headers={"X-Source": RP1, "X-Source-Secret": "obs-rp1"},
        )
        assert response.status_code == 200
        assert response.json()["values"]["used:ip:192.0.2.1"] is False

        fetched = world["cap"].get(
            "/ctx-id", headers={"X-User": ALICE, "X-User-Secret": "alice-login"}
        )
        assert fetched.json()["ctx_ids"] == {LOCATION: ctx_id}

    def test_context_request_challenge_then_response(self, world):
        ctx_id = self.bootstrap(world)
        world["cap"].post(
            "/observe",
            json={
                "subject": ALICE,
                "ctx_type": LOCATION,
                "payload": {"device": "laptop", "ip": "192.0.2.1"},
            },
            headers={"X-Source": RP1, "X-Source-Secret": "obs-rp1"},
        )
        challenge = world["cap"].get(f"/ctx/{ctx_id}", params={"scopes": "used:ip"})
        assert challenge.status_code == 401
        ticket = challenge.json()["ticket"]
        assert "UMA" in challenge.headers["WWW-Authenticate"]

        headers = owner_headers(world)
        world["authz"].post(
            "/policy",
            json={"requesting_party": RP1, "ctx_type": LOCATION, "scopes": ["used:ip"]},
            headers=headers,
        )
        granted = world["authz"].post(
            "/token",
            json={"ticket": ticket, "claims": {"requesting_party": RP1}},
            headers=rp_entity_headers(),
        ).json()
        response = world["cap"].get(
            f"/ctx/{ctx_id}",
            params={"scopes": "used:ip"},
            headers={"Authorization": f"Bearer {granted['rpt']}"},
        )
        assert response.status_code == 200
        claims = peek_claims(response.json()["set"])
        event = claims["events"][LOCATION]
        assert event["used:ip:192.0.2.1"] is False
        assert "ip:current" not in event  # outside the granted scope

    def test_stream_endpoints(self, world):
        ctx_id = self.bootstrap(world)
        headers = owner_headers(world)
        world["authz"].post(
            "/policy",
            json={"requesting_party": RP1, "ctx_type": LOCATION, "scopes": ["used:ip"]},
            headers=headers,
        )
        created = world["cap"].post(
            "/streams",
            json={
                "receiver": RP1,
                "delivery": {"mode": "poll", "endpoint": None},
                "ctx_types": [LOCATION],
            },
            headers=rp_entity_headers(),
        )
        assert created.status_code == 200
        stream_id = created.json()["stream_id"]

        duplicate = world["cap"].post(
            "/streams",
            json={
                "receiver": RP1,
                "delivery": {"mode": "poll", "endpoint": None},
                "ctx_types": [LOCATION],
            },
            headers=rp_entity_headers(),
        )
        assert duplicate.status_code == 409
        assert duplicate.json()["stream_id"] == stream_id

        pat = world["authz"].post(
            "/pat", json={"cap": CAP1, "owner": ALICE}, headers=cap_entity_headers()
        ).json()["pat"]
        ticket = world["authz"].post(
            "/permission",
            json={"ctx_id": ctx_id, "scopes": ["used:ip"]},
            headers={"Authorization": f"Bearer {pat}"},
        ).json()["ticket"]
        rpt = world["authz"].post(
            "/token",
            json={"ticket": ticket, "claims": {"requesting_party": RP1}},
            headers=rp_entity_headers(),
        ).json()["rpt"]

        added = world["cap"].post(
            f"/streams/{stream_id}/subjects",
            json={"subject": ALICE, "rpt": rpt},
            headers=rp_entity_headers(),
        )
        assert added.json()["state"] == "approved"

        world["cap"].post(
            "/observe",
            json={
                "subject": ALICE,
                "ctx_type": LOCATION,
                "payload": {"device": "laptop", "ip": "192.0.2.1"},
            },
            headers={"X-Source": RP1, "X-Source-Secret": "obs-rp1"},
        )
        polled = world["cap"].get(
            f"/streams/{stream_id}/poll", headers=rp_entity_headers()
        )
        tokens = polled.json()["tokens"]
        assert len(tokens) == 1
        assert peek_claims(tokens[0])["aud"] == RP1

    def test_stream_creation_needs_matching_entity(self, world):
        response = world["cap"].post(
            "/streams",
            json={
                "receiver": "https://other.example",
                "delivery": {"mode": "poll", "endpoint": None},
                "ctx_types": [LOCATION],
            },
            headers=rp_entity_headers(),
        )
        assert response.status_code == 403


class TestIdpApi:
    def test_token_and_compromise(self, world):
        issued = world["idp"].post(
            "/token",
            json={
                "issuer": IDP1,
                "user": ALICE,
                "credential": "pw",
                "audience": RP1,
            },
        )
        assert issued.status_code == 200

        refused = world["idp"].post(
            "/token",
            json={
                "issuer": IDP1,
                "user": ALICE,
                "credential": "wrong",
                "audience": RP1,
            },
        )
        assert refused.status_code == 401

        world["idp"].post("/compromise", json={"issuer": IDP1, "flag": True})
        forged = world["idp"].post(
            "/token",
            json={"issuer": IDP1, "user": ALICE, "credential": None, "audience": RP1},
        )
        assert forged.status_code == 200


class TestRpApi:
    def test_protected_resource_denies_by_default(self, world):
        response = world["rp"].get("/resource/demo")
        assert response.status_code == 403
        assert response.json()["decision"] == "deny"

    def test_register_ctx_id_requires_identity(self, world):
        response = world["rp"].post(
            "/register-ctx-id", json={"cap": CAP1, "ctx_id": "ctx-1"}
        )
        assert response.status_code == 401

    def test_ctx_recv_rejects_garbage(self, world):
        response = world["rp"].post("/ctx-recv", content=b"not-a-token")
        assert response.status_code == 400
