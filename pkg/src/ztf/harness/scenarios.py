"""Scripted federation scenarios, one per evaluation use case.

Each scenario boots its own federation (policies set for the story being
told), drives it step by step over the services' HTTP APIs, and emits a
machine-readable report: per-step expected vs actual, the decision traces
involved, and the scope-confinement audit of everything delivered.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import httpx

from .audit import audit_scope_confinement
from .runner import Federation
from .topology import (
    ALICE,
    CAP1,
    CAP2,
    CAP3,
    DEVICE_HEALTH,
    DEVICE_LOCATION,
    HEALTH_AND_NETWORK_POLICY,
    IDENTITY_ONLY_POLICY,
    IDP1,
    IDP2,
    IDP3,
    KNOWN_NETWORK_POLICY,
    LAPTOP,
    RP1,
    RP2,
    AGENT_SOURCE,
    TopologySpec,
    default_topology,
)

NETWORK_X = "203.0.113.5"
NETWORK_Y = "198.51.100.9"
NETWORK_Z = "198.51.100.66"


class ScenarioAborted(Exception):
    def __init__(self, scenario: str, step: str, cause: Exception):
        super().__init__(f"{scenario} aborted at {step}: {cause}")
        self.scenario = scenario
        self.step = step
        self.cause = cause


@dataclass
class ScenarioStep:
    name: str
    expected: Any
    actual: Any
    ok: bool
    detail: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "expected": self.expected,
            "actual": self.actual,
            "ok": self.ok,
            "detail": self.detail,
        }


@dataclass
class ScenarioReport:
    scenario: str
    seed: int
    steps: list[ScenarioStep] = field(default_factory=list)
    counters: dict[str, Any] = field(default_factory=dict)
    audit: dict[str, Any] = field(default_factory=dict)
    runtime_s: float = 0.0

    @property
    def verdict(self) -> str:
        return "PASS" if all(s.ok for s in self.steps) else "FAIL"

    def to_json(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "verdict": self.verdict,
            "steps": [s.to_json() for s in self.steps],
            "counters": self.counters,
            "audit": self.audit,
            "runtime_s": self.runtime_s,
        }


class Driver:
    """Sequential step driver speaking to the booted services over HTTP."""

    def __init__(self, fed: Federation):
        self.fed = fed
        self.http = httpx.Client(timeout=10.0)
        self._sessions: dict[str, str] = {}

    def close(self) -> None:
        self.http.close()

    # -- raw service calls -------------------------------------------------

    def _authz(self) -> str:
        return self.fed.base_urls["authz"]

    def owner_session(self, user: str) -> str:
        if user not in self._sessions:
            secret = self.fed.topology.users[user]
            response = self.http.post(
                f"{self._authz()}/login", json={"user": user, "secret": secret}
            )
            response.raise_for_status()
            self._sessions[user] = response.json()["session"]
        return self._sessions[user]

    def idp_token(
        self, issuer: str, user: str, audience: str, credential: Optional[str] = "auto"
    ) -> str:
        if credential == "auto":
            credential = next(
                a.credential
                for a in self.fed.topology.idp_accounts
                if a.issuer == issuer and a.user == user
            )
        response = self.http.post(
            f"{self.fed.base_urls['idp']}/token",
            json={
                "issuer": issuer,
                "user": user,
                "credential": credential,
                "audience": audience,
            },
        )
        response.raise_for_status()
        return response.json()["token"]

    def compromise(self, issuer: str, flag: bool) -> None:
        response = self.http.post(
            f"{self.fed.base_urls['idp']}/compromise",
            json={"issuer": issuer, "flag": flag},
        )
        response.raise_for_status()

    def bootstrap(self, cap_uri: str, owner: str) -> dict[str, str]:
        response = self.http.post(
            f"{self.fed.url_of(cap_uri)}/bootstrap", json={"owner": owner}
        )
        response.raise_for_status()
        return response.json()["ctx_ids"]

    def fetch_ctx_ids(self, cap_uri: str, user: str) -> dict[str, str]:
        response = self.http.get(
            f"{self.fed.url_of(cap_uri)}/ctx-id",
            headers={"X-User": user, "X-User-Secret": self.fed.topology.users[user]},
        )
        response.raise_for_status()
        return response.json()["ctx_ids"]

    def set_policy(
        self, owner: str, requesting_party: str, ctx_type: str, scopes: list[str]
    ) -> None:
        response = self.http.post(
            f"{self._authz()}/policy",
            json={
                "requesting_party": requesting_party,
                "ctx_type": ctx_type,
                "scopes": scopes,
            },
            headers={"Authorization": f"Bearer {self.owner_session(owner)}"},
        )
        response.raise_for_status()

    def register_ctx_id(
        self, rp_uri: str, identity_token: str, cap_uri: str, ctx_id: str
    ) -> None:
        response = self.http.post(
            f"{self.fed.url_of(rp_uri)}/register-ctx-id",
            json={"cap": cap_uri, "ctx_id": ctx_id},
            headers={"Authorization": f"Bearer {identity_token}"},
        )
        response.raise_for_status()

    def acquire(
        self, rp_uri: str, user: str, cap_uri: str, ctx_type: str, scopes: list[str]
    ) -> dict[str, Any]:
        response = self.http.post(
            f"{self.fed.url_of(rp_uri)}/acquire",
            json={"user": user, "cap": cap_uri, "ctx_type": ctx_type, "scopes": scopes},
        )
        response.raise_for_status()
        return response.json()

    def access(
        self,
        rp_uri: str,
        token: Optional[str],
        source_ip: str,
        device: Optional[str],
        path: str = "demo",
    ) -> dict[str, Any]:
        headers = {"X-Source-Ip": source_ip}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        if device:
            headers["X-Device-Cn"] = device
        response = self.http.get(
            f"{self.fed.url_of(rp_uri)}/resource/{path}", headers=headers
        )
        body = response.json()
        self.fed.await_quiescence()
        return body

    def observe(
        self,
        cap_uri: str,
        source: str,
        subject: str,
        ctx_type: str,
        payload: dict[str, Any],
        device: Optional[str] = None,
    ) -> dict[str, Any]:
        secret = self.fed.topology.source_secrets[cap_uri][source]
        response = self.http.post(
            f"{self.fed.url_of(cap_uri)}/observe",
            json={
                "subject": subject,
                "ctx_type": ctx_type,
                "payload": payload,
                "device": device,
            },
            headers={"X-Source": source, "X-Source-Secret": secret},
        )
        response.raise_for_status()
        self.fed.await_quiescence()
        return response.json()

    def delivery_log(self, rp_uri: str) -> list[dict[str, Any]]:
        response = self.http.get(f"{self.fed.url_of(rp_uri)}/delivery-log")
        response.raise_for_status()
        return response.json()["entries"]

    # -- composite setup ---------------------------------------------------------

    def establish_sharing(
        self,
        steps: list[ScenarioStep],
        *,
        cap_uri: str,
        rp_uri: str,
        ctx_type: str,
        scopes: list[str],
        login_issuer: str,
        user: str = ALICE,
    ) -> dict[str, Any]:
        """Bootstrap, register, set policy, and run the grant flow."""
        ctx_ids = self.bootstrap(cap_uri, user)
        fetched = self.fetch_ctx_ids(cap_uri, user)
        check(
            steps,
            f"user fetches ctx id from {short(cap_uri)}",
            ctx_ids[ctx_type],
            fetched.get(ctx_type),
        )
        self.set_policy(user, rp_uri, ctx_type, scopes)
        token = self.idp_token(login_issuer, user, rp_uri)
        self.register_ctx_id(rp_uri, token, cap_uri, ctx_ids[ctx_type])
        result = self.acquire(rp_uri, user, cap_uri, ctx_type, scopes)
        check(
            steps,
            f"{short(rp_uri)} acquires {short(cap_uri)} grant",
            {"denied": False, "scopes": scopes},
            {
                "denied": result["denied"],
                "scopes": result["grants"][0]["scopes"] if result["grants"] else [],
            },
            trace=result["trace"],
        )
        return {"ctx_id": ctx_ids[ctx_type], "acquire": result, "token": token}


def short(uri: str) -> str:
    return uri.removeprefix("https://").removesuffix(".example")


def check(
    steps: list[ScenarioStep],
    name: str,
    expected: Any,
    actual: Any,
    **detail: Any,
) -> ScenarioStep:
    step = ScenarioStep(
        name=name, expected=expected, actual=actual, ok=expected == actual, detail=detail
    )
    steps.append(step)
    return step


# --------------------------------------------------------------------------
# the four use cases
# --------------------------------------------------------------------------


def scenario_device_health(fed: Federation) -> list[ScenarioStep]:
    """Outdated device denied; the agent updates; same request allowed."""
    driver = Driver(fed)
    steps: list[ScenarioStep] = []
    try:
        driver.establish_sharing(
            steps,
            cap_uri=CAP2,
            rp_uri=RP2,
            ctx_type=DEVICE_HEALTH,
            scopes=["up-to-date"],
            login_issuer=IDP3,
        )
        driver.observe(
            CAP2, AGENT_SOURCE, ALICE, DEVICE_HEALTH,
            {"device": LAPTOP, "version": "1.2.3"}, device=LAPTOP,
        )
        token = driver.idp_token(IDP3, ALICE, RP2)
        first = driver.access(RP2, token, NETWORK_X, LAPTOP)
        check(
            steps,
            "outdated device is denied",
            "deny",
            first["decision"],
            cited=first["trace"]["context"],
        )
        health_evidence = [
            c for c in first["trace"]["context"] if c["key"] == f"up-to-date:{LAPTOP}"
        ]
        check(
            steps,
            "denial cites the stale health context",
            {"present": True, "value": False},
            {
                "present": bool(health_evidence) and health_evidence[0]["present"],
                "value": health_evidence[0]["value"] if health_evidence else None,
            },
        )
        driver.observe(
            CAP2, AGENT_SOURCE, ALICE, DEVICE_HEALTH,
            {"device": LAPTOP, "version": "1.3.0"}, device=LAPTOP,
        )
        second = driver.access(RP2, token, NETWORK_X, LAPTOP)
        check(steps, "updated device is allowed", "allow", second["decision"])
        return steps
    finally:
        driver.close()


def scenario_cross_rp_sharing(fed: Federation) -> list[ScenarioStep]:
    """Accesses at RP2 build network history via CAP1; RP1 then allows the
    known network and denies a novel one."""
    driver = Driver(fed)
    steps: list[ScenarioStep] = []
    try:
        driver.establish_sharing(
            steps,
            cap_uri=CAP1,
            rp_uri=RP1,
            ctx_type=DEVICE_LOCATION,
            scopes=["used:ip"],
            login_issuer=IDP1,
        )
        rp2_token = driver.idp_token(IDP3, ALICE, RP2)
        for i in range(2):
            body = driver.access(RP2, rp2_token, NETWORK_X, LAPTOP)
            check(steps, f"history-building access {i + 1} at rp2", "allow", body["decision"])

        rp1_token = driver.idp_token(IDP1, ALICE, RP1)
        known = driver.access(RP1, rp1_token, NETWORK_X, LAPTOP)
        check(steps, "rp1 allows the known network", "allow", known["decision"])
        cited = [
            c
            for c in known["trace"]["context"]
            if c["cap"] == CAP1 and c["key"] == f"used:ip:{NETWORK_X}" and c["value"] is True
        ]
        check(
            steps,
            "rp1 decision cites a used:ip entry from cap1",
            True,
            bool(cited),
            consulted=known["trace"]["context"],
        )
        novel = driver.access(RP1, rp1_token, NETWORK_Y, LAPTOP)
        check(steps, "rp1 denies a novel network", "deny", novel["decision"])

        observations_at_rp2 = sum(
            1
            for e in fed.rps[RP2].decision_log
            if e["decision"] == "allow"
        )
        stream_updates_at_rp1 = sum(
            1
            for e in driver.delivery_log(RP1)
            if e["iss"] == CAP1 and e["origin"] == "stream-push"
        )
        check(
            steps,
            "updates received at rp1 equal observations emitted at rp2",
            observations_at_rp2,
            stream_updates_at_rp1,
        )
        return steps
    finally:
        driver.close()


def scenario_idp_switch(fed: Federation) -> list[ScenarioStep]:
    """Identical decisions before and after switching the identity issuer."""
    driver = Driver(fed)
    steps: list[ScenarioStep] = []
    try:
        driver.establish_sharing(
            steps,
            cap_uri=CAP1,
            rp_uri=RP1,
            ctx_type=DEVICE_LOCATION,
            scopes=["used:ip"],
            login_issuer=IDP2,
        )
        rp2_token = driver.idp_token(IDP3, ALICE, RP2)
        for _ in range(2):
            driver.access(RP2, rp2_token, NETWORK_X, LAPTOP)

        before = driver.access(
            RP1, driver.idp_token(IDP2, ALICE, RP1), NETWORK_X, LAPTOP
        )
        after = driver.access(
            RP1, driver.idp_token(IDP1, ALICE, RP1), NETWORK_X, LAPTOP
        )
        check(steps, "allowed before the switch", "allow", before["decision"])
        check(steps, "allowed after the switch", "allow", after["decision"])

        t_before = dict(before["trace"])
        t_after = dict(after["trace"])
        id_before = t_before.pop("identity")
        id_after = t_after.pop("identity")
        check(
            steps,
            "traces identical apart from identity",
            t_before,
            t_after,
        )
        check(
            steps,
            "issuer changed from idp2 to idp1",
            {"before": IDP2, "after": IDP1},
            {"before": id_before.get("iss"), "after": id_after.get("iss")},
        )
        check(
            steps,
            "identity block otherwise unchanged",
            {k: v for k, v in id_before.items() if k != "iss"},
            {k: v for k, v in id_after.items() if k != "iss"},
        )
        refs_before = before["trace"]["ctx_refs"].get(CAP1, {})
        refs_after = after["trace"]["ctx_refs"].get(CAP1, {})
        check(
            steps,
            "same ctx id and requesting-party token in use",
            {"same": True, "populated": True},
            {
                "same": refs_before == refs_after,
                "populated": bool(refs_before.get("ctx_id") and refs_before.get("rpt")),
            },
            refs=refs_before,
        )
        return steps
    finally:
        driver.close()


def scenario_compromised_idp(fed: Federation) -> list[ScenarioStep]:
    """A forged identity passes verification yet is denied on context."""
    driver = Driver(fed)
    steps: list[ScenarioStep] = []
    try:
        driver.establish_sharing(
            steps,
            cap_uri=CAP2,
            rp_uri=RP2,
            ctx_type=DEVICE_HEALTH,
            scopes=["up-to-date"],
            login_issuer=IDP3,
        )
        ctx_ids = driver.bootstrap(CAP1, ALICE)
        driver.set_policy(ALICE, RP2, DEVICE_LOCATION, ["used:ip"])
        token = driver.idp_token(IDP3, ALICE, RP2)
        driver.register_ctx_id(RP2, token, CAP1, ctx_ids[DEVICE_LOCATION])
        acquire = driver.acquire(RP2, ALICE, CAP1, DEVICE_LOCATION, ["used:ip"])
        check(steps, "rp2 acquires cap1 grant", False, acquire["denied"])

        driver.observe(
            CAP2, AGENT_SOURCE, ALICE, DEVICE_HEALTH,
            {"device": LAPTOP, "version": "1.3.0"}, device=LAPTOP,
        )
        for _ in range(2):  # prior behaviour: alice's laptop seen on network X
            driver.observe(
                CAP1, RP2, ALICE, DEVICE_LOCATION,
                {"device": LAPTOP, "ip": NETWORK_X}, device=LAPTOP,
            )

        baseline = driver.access(RP2, driver.idp_token(IDP3, ALICE, RP2), NETWORK_X, LAPTOP)
        check(steps, "legitimate access allowed", "allow", baseline["decision"])

        driver.compromise(IDP3, True)
        forged = driver.idp_token(IDP3, ALICE, RP2, credential=None)
        attack = driver.access(RP2, forged, NETWORK_Z, "attacker-box")
        check(
            steps,
            "stage 1: forged token passes signature and audience checks",
            True,
            attack["trace"]["identity"].get("verified"),
            identity=attack["trace"]["identity"],
        )
        check(steps, "stage 2: access denied on context", "deny", attack["decision"])
        anomalous = [
            c
            for c in attack["trace"]["context"]
            if c["cap"] in (CAP1, CAP2) and not c["satisfied"]
        ]
        check(
            steps,
            "denial cites anomalous context from cap1/cap2",
            True,
            len(anomalous) >= 1,
            cited=anomalous,
        )
        driver.compromise(IDP3, False)
        return steps
    finally:
        driver.close()


def scenario_empty(fed: Federation) -> list[ScenarioStep]:
    return []


SCENARIOS: dict[str, Callable[[Federation], list[ScenarioStep]]] = {
    "device_health": scenario_device_health,
    "cross_rp_sharing": scenario_cross_rp_sharing,
    "idp_switch": scenario_idp_switch,
    "compromised_idp": scenario_compromised_idp,
    "empty": scenario_empty,
}

USE_CASES = ["device_health", "cross_rp_sharing", "idp_switch", "compromised_idp"]


def topology_for(name: str) -> TopologySpec:
    if name == "device_health":
        return default_topology()
    if name == "cross_rp_sharing":
        return default_topology(rp2_policy=IDENTITY_ONLY_POLICY)
    if name == "idp_switch":
        return default_topology(rp2_policy=IDENTITY_ONLY_POLICY)
    if name == "compromised_idp":
        return default_topology(rp2_policy=HEALTH_AND_NETWORK_POLICY)
    return default_topology()


def run_scenario(
    name: str,
    *,
    seed: int = 0,
    auto_consent: bool = True,
    topology: TopologySpec | None = None,
) -> ScenarioReport:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    report = ScenarioReport(scenario=name, seed=seed)
    fed = Federation(
        topology=topology or topology_for(name), seed=seed, auto_consent=auto_consent
    )
    started = time.monotonic()
    with fed:
        current_step = "boot"
        try:
            report.steps = SCENARIOS[name](fed)
            current_step = "audit"
            report.audit = audit_scope_confinement(fed)
            report.counters = {
                "services": len(fed.services),
                "deliveries": report.audit["deliveries"],
                "authz_events": len(fed.authz.log),
            }
        except Exception as exc:  # noqa: BLE001 - aborts carry the cause
            raise ScenarioAborted(name, current_step, exc) from exc
    report.runtime_s = round(time.monotonic() - started, 3)
    return report
