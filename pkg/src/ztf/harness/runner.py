"""Boots a federation on loopback: one HTTP service per entity, each
wrapping its core object, all sharing one simulated clock and one seeded
id factory so runs are reproducible.

Seven services: the authorization server, one identity service hosting
all issuers, three context providers, two relying parties.
"""

from __future__ import annotations

import asyncio
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Optional

import httpx
import uvicorn
from fastapi import FastAPI

from ..api import create_authz_app, create_cap_app, create_idp_app, create_rp_app
from ..authz import AuthorizationServer
from ..cap import CapConfig, ContextProvider, ServedType, UpstreamSubscription
from ..clients import HttpAuthzClient, HttpCapClient, HttpObserveClient, http_pusher
from ..clock import SimulatedClock
from ..codec import KeyRing
from ..idp import IdentityProvider, IdpAccount
from ..ids import IdFactory
from ..model import ContextType, Scope
from ..rp import DecisionPolicy, ObservationTarget, RelyingParty
from .topology import TopologySpec, default_topology


class PortUnavailable(Exception):
    pass


class BootFailed(Exception):
    pass


class _ServiceHandle:
    def __init__(self, name: str, app: FastAPI, sock: socket.socket):
        self.name = name
        self.sock = sock
        self.port = sock.getsockname()[1]
        config = uvicorn.Config(
            app, log_level="warning", access_log=False, lifespan="off"
        )
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(
            target=self._run, daemon=True, name=f"svc-{name}"
        )

    def _run(self) -> None:
        asyncio.run(self.server.serve(sockets=[self.sock]))

    def start(self) -> None:
        self.thread.start()

    def stop(self) -> None:
        self.server.should_exit = True
        self.server.force_exit = True
        self.thread.join(timeout=10)
        try:
            self.sock.close()
        except OSError:
            pass


def _bind(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise PortUnavailable(f"cannot bind {host}:{port}: {exc}") from None
    sock.listen(128)
    return sock


@dataclass
class Federation:
    topology: TopologySpec = field(default_factory=default_topology)
    seed: int = 0
    auto_consent: bool = True
    host: str = "127.0.0.1"
    clock_start: float = 1619696843.0

    def __post_init__(self) -> None:
        self.clock = SimulatedClock(self.clock_start)
        self.ids = IdFactory(self.seed)
        self.master_ring = KeyRing()
        self.services: dict[str, _ServiceHandle] = {}
        self.base_urls: dict[str, str] = {}  # service name -> http URL
        self.entity_urls: dict[str, str] = {}  # logical URI -> http URL
        self.authz: Optional[AuthorizationServer] = None
        self.caps: dict[str, ContextProvider] = {}
        self.rps: dict[str, RelyingParty] = {}
        self.idp: Optional[IdentityProvider] = None
        self._running = False

    # -- construction ------------------------------------------------------

    def _service_names(self) -> dict[str, str]:
        """service name -> logical URI"""
        names = {"authz": self.topology.authz_uri, "idp": "idp"}
        for i, cap in enumerate(self.topology.caps, start=1):
            names[f"cap{i}"] = cap.issuer
        for i, rp in enumerate(self.topology.rps, start=1):
            names[f"rp{i}"] = rp.uri
        return names

    def _ring_for(self, *private_issuers: str) -> KeyRing:
        ring = self.master_ring.public_view()
        for issuer in private_issuers:
            ring.add_issuer(issuer, self.master_ring.signing_key(issuer))
        return ring

    def boot(self) -> "Federation":
        if self._running:
            return self
        topology = self.topology
        names = self._service_names()

        sockets: dict[str, socket.socket] = {}
        try:
            for name in names:
                port = topology.fixed_ports.get(name, 0)
                sockets[name] = _bind(self.host, port)
        except PortUnavailable:
            for sock in sockets.values():
                sock.close()
            raise
        for name, sock in sockets.items():
            url = f"http://{self.host}:{sock.getsockname()[1]}"
            self.base_urls[name] = url
            self.entity_urls[names[name]] = url

        for issuer in topology.idp_issuers + [c.issuer for c in topology.caps]:
            self.master_ring.generate_issuer(issuer, seed=self.ids.key_seed())

        authz_url = self.base_urls["authz"]
        self.authz = AuthorizationServer(
            clock=self.clock,
            ids=self.ids,
            auto_approve_consent=self.auto_consent,
            known_caps=[c.issuer for c in topology.caps],
        )

        self.idp = IdentityProvider(
            set(topology.idp_issuers),
            [
                IdpAccount(a.issuer, a.user, a.credential)
                for a in topology.idp_accounts
            ],
            self._ring_for(*topology.idp_issuers),
            clock=self.clock,
            ids=self.ids,
        )

        for spec in topology.caps:
            config = CapConfig(
                issuer=spec.issuer,
                served=tuple(
                    ServedType(
                        ctx_type=ContextType(s.ctx_type),
                        scopes=frozenset(Scope(n) for n in s.scopes),
                        derivation=s.derivation,
                        vocabulary=frozenset(s.vocabulary),
                    )
                    for s in spec.served
                ),
                known_sources=frozenset(spec.sources),
                upstreams=tuple(
                    UpstreamSubscription(
                        upstream_cap=u.upstream_cap,
                        upstream_ctx_type=u.upstream_ctx_type,
                        fold_into=u.fold_into,
                    )
                    for u in spec.upstreams
                ),
                latest_version=spec.latest_version,
                wifi_whitelist=frozenset(spec.wifi_whitelist),
            )
            self.caps[spec.issuer] = ContextProvider(
                config,
                keyring=self._ring_for(spec.issuer),
                authz=HttpAuthzClient(
                    authz_url, spec.issuer, topology.entity_secrets[spec.issuer]
                ),
                pusher=http_pusher,
                clock=self.clock,
                ids=self.ids,
            )

        for spec in topology.rps:
            secret = topology.entity_secrets[spec.uri]
            cap_clients = {
                cap.issuer: HttpCapClient(
                    self.entity_urls[cap.issuer], spec.uri, secret
                )
                for cap in topology.caps
            }
            observe_targets = [
                ObservationTarget(
                    client=HttpObserveClient(
                        self.entity_urls[obs["cap"]],
                        spec.uri,
                        topology.source_secrets[obs["cap"]][spec.uri],
                    ),
                    ctx_type=obs["ctx_type"],
                )
                for obs in spec.observes
            ]
            self.rps[spec.uri] = RelyingParty(
                spec.uri,
                trusted_issuers=set(spec.trusted_issuers),
                keyring=self.master_ring.public_view(),
                policy=DecisionPolicy.from_json(spec.policy),
                authz=HttpAuthzClient(authz_url, spec.uri, secret),
                cap_clients=cap_clients,
                observe_targets=observe_targets,
                clock=self.clock,
                ids=self.ids,
                push_endpoint=f"{self.entity_urls[spec.uri]}/ctx-recv",
            )

        apps: dict[str, FastAPI] = {
            "authz": create_authz_app(
                self.authz,
                user_accounts=topology.users,
                entity_secrets=topology.entity_secrets,
                static_dir="frontend/dist",
            ),
            "idp": create_idp_app(self.idp),
        }
        for name, uri in names.items():
            if name.startswith("cap"):
                provider = self.caps[uri]
                secret = topology.entity_secrets[uri]
                apps[name] = create_cap_app(
                    provider,
                    source_secrets=topology.source_secrets.get(uri, {}),
                    entity_secrets=topology.entity_secrets,
                    user_accounts=topology.users,
                    upstream_client_factory=lambda peer, uri=uri, secret=secret: HttpCapClient(
                        self.entity_urls[peer], uri, secret
                    ),
                )
            elif name.startswith("rp"):
                apps[name] = create_rp_app(self.rps[uri])

        for name, app in apps.items():
            handle = _ServiceHandle(name, app, sockets[name])
            self.services[name] = handle
            handle.start()

        self._wait_healthy()
        self._running = True
        return self

    def _wait_healthy(self, timeout: float = 10.0) -> None:
        deadline = time.monotonic() + timeout
        with httpx.Client(timeout=1.0) as probe:
            for name, url in self.base_urls.items():
                while True:
                    try:
                        if probe.get(f"{url}/healthz").status_code == 200:
                            break
                    except httpx.TransportError:
                        pass
                    if time.monotonic() > deadline:
                        self.shutdown()
                        raise BootFailed(f"service {name} did not become healthy")
                    time.sleep(0.01)

    def shutdown(self) -> None:
        for handle in self.services.values():
            handle.stop()
        for provider in self.caps.values():
            provider.authz.http.close()
        for rp in self.rps.values():
            rp.authz.http.close()
            for client in rp.cap_clients.values():
                client.http.close()
            for target in rp.observe_targets:
                target.client.http.close()
        self.services.clear()
        self._running = False

    def __enter__(self) -> "Federation":
        return self.boot()

    def __exit__(self, *exc: Any) -> None:
        self.shutdown()

    # -- driver conveniences ------------------------------------------------

    def url_of(self, logical_uri: str) -> str:
        return self.entity_urls[logical_uri]

    def ports(self) -> dict[str, int]:
        return {name: h.port for name, h in self.services.items()}

    def await_quiescence(self, attempts: int = 20) -> None:
        """Flush retained deliveries until every provider outbox is empty."""
        for _ in range(attempts):
            pending = 0
            for provider in self.caps.values():
                provider.streams.flush()
                pending += provider.streams.pending_count()
            if pending == 0:
                return
        raise BootFailed("delivery queues did not drain")
