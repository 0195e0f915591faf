"""Minimal identity providers issuing signed identity tokens.

One service can host several issuers. A compromised issuer skips the
credential check but still signs with its real key, so forged tokens are
cryptographically indistinguishable from honest ones; only context-based
decisions downstream can catch them.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

from .clock import Clock, SystemClock
from .codec import KeyRing, sign_claims
from .ids import IdFactory


class BadCredential(Exception):
    pass


class UnknownAccount(Exception):
    pass


@dataclass(frozen=True)
class IdpAccount:
    issuer: str
    user_email: str
    credential: str


class IdentityProvider:
    def __init__(
        self,
        issuers: set[str],
        accounts: list[IdpAccount],
        keyring: KeyRing,
        *,
        clock: Clock | None = None,
        ids: IdFactory | None = None,
    ):
        self.issuers = set(issuers)
        self.keyring = keyring
        self.clock = clock or SystemClock()
        self.ids = ids or IdFactory()
        self._accounts: dict[tuple[str, str], str] = {
            (a.issuer, a.user_email): a.credential for a in accounts
        }
        self._compromised: set[str] = set()
        self._lock = threading.Lock()

    def authenticate_and_issue(
        self,
        issuer: str,
        user_email: str,
        credential: Optional[str],
        audience: str,
    ) -> str:
        if issuer not in self.issuers:
            raise UnknownAccount(f"issuer {issuer} not hosted here")
        with self._lock:
            compromised = issuer in self._compromised
        if not compromised:
            expected = self._accounts.get((issuer, user_email))
            if expected is None:
                raise UnknownAccount(f"{user_email} has no account at {issuer}")
            if credential != expected:
                raise BadCredential(user_email)
        claims = {
            "iss": issuer,
            "sub": user_email,
            "aud": audience,
            "iat": int(self.clock.now()),
            "jti": self.ids.new_id("idjti"),
        }
        return sign_claims(issuer, claims, self.keyring)

    def set_compromised(self, issuer: str, flag: bool) -> None:
        with self._lock:
            if flag:
                self._compromised.add(issuer)
            else:
                self._compromised.discard(issuer)

    def is_compromised(self, issuer: str) -> bool:
        with self._lock:
            return issuer in self._compromised
