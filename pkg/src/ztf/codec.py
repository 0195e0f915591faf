"""Security event token codec: sign, verify, encode and decode context events.

Tokens are compact JWTs (three base64url segments) signed with Ed25519.
A context event token carries exactly the claims iss/aud/iat/jti/events,
with each event holding a "subject" block plus scope-qualified entries:

    { "aud": "https://rp1.example",
      "iat": 1619696843,
      "iss": "https://cap1.example",
      "jti": "...",
      "events": {
        "https://cap1.example/ctxtype/device-location": {
          "subject": {
            "user":   { "format": "email", "email": "alice@example.com" },
            "device": { "format": "cn",    "cn":    "alice-no-Laptop" }},
          "used:ip:192.0.2.1": true }}}

Verification keys are trust anchors distributed as static configuration;
there is no rotation protocol and no expiry check here — token freshness
is the receiver's policy.
"""

from __future__ import annotations

import base64
import binascii
import json
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .clock import Clock, SystemClock
from .model import ContextType, ContextValueSet, SubjectId


class NoSigningKey(Exception):
    """The issuer has no signing key in this keyring."""


class UnknownIssuer(Exception):
    """No verification key for the token's issuer."""


class BadSignature(Exception):
    """Signature does not verify under the issuer's key."""


class AudienceMismatch(Exception):
    """Token audience differs from the expected audience."""


class MalformedToken(Exception):
    """Token is not a well-formed compact JWT with the required claims."""


def _b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _b64url_decode(segment: str) -> bytes:
    padded = segment + "=" * (-len(segment) % 4)
    decoded = base64.urlsafe_b64decode(padded.encode("ascii"))
    # Reject non-canonical encodings: trailing bits the decoder would
    # otherwise ignore must round-trip, or two distinct tokens could carry
    # the same signature bytes.
    if _b64url_encode(decoded) != segment:
        raise ValueError("non-canonical base64url segment")
    return decoded


class KeyRing:
    """Signing keys for local issuers, verification keys for the federation."""

    def __init__(self) -> None:
        self._signing: dict[str, Ed25519PrivateKey] = {}
        self._verify: dict[str, Ed25519PublicKey] = {}

    def add_issuer(self, issuer: str, private_key: Ed25519PrivateKey) -> None:
        self._signing[issuer] = private_key
        self._verify[issuer] = private_key.public_key()

    def add_verification_key(self, issuer: str, public_key: Ed25519PublicKey) -> None:
        self._verify[issuer] = public_key

    def generate_issuer(self, issuer: str, seed: bytes | None = None) -> None:
        if seed is not None:
            key = Ed25519PrivateKey.from_private_bytes(seed)
        else:
            key = Ed25519PrivateKey.generate()
        self.add_issuer(issuer, key)

    def signing_key(self, issuer: str) -> Ed25519PrivateKey:
        try:
            return self._signing[issuer]
        except KeyError:
            raise NoSigningKey(issuer) from None

    def verification_key(self, issuer: str) -> Ed25519PublicKey:
        try:
            return self._verify[issuer]
        except KeyError:
            raise UnknownIssuer(issuer) from None

    def issuers(self) -> list[str]:
        return sorted(self._verify)

    def public_view(self) -> "KeyRing":
        """Verification-only copy, as shipped to receivers."""
        ring = KeyRing()
        ring._verify = dict(self._verify)
        return ring

    def to_config(self) -> dict[str, str]:
        """Static trust-anchor file content: issuer -> base64 raw public key."""
        return {
            issuer: base64.b64encode(
                key.public_bytes_raw()
            ).decode("ascii")
            for issuer, key in self._verify.items()
        }

    @classmethod
    def from_config(cls, config: Mapping[str, str]) -> "KeyRing":
        ring = cls()
        for issuer, encoded in config.items():
            ring._verify[issuer] = Ed25519PublicKey.from_public_bytes(
                base64.b64decode(encoded)
            )
        return ring


def sign_claims(
    issuer: str,
    claims: Mapping[str, Any],
    keyring: KeyRing,
    kid: str | None = None,
) -> str:
    """Compact-serialize and sign arbitrary claims as the given issuer."""
    key = keyring.signing_key(issuer)
    header: dict[str, Any] = {"alg": "EdDSA", "typ": "secevent+jwt"}
    if kid:
        header["kid"] = kid
    signing_input = (
        _b64url_encode(json.dumps(header, separators=(",", ":")).encode())
        + "."
        + _b64url_encode(json.dumps(claims, separators=(",", ":")).encode())
    ).encode("ascii")
    signature = key.sign(signing_input)
    return signing_input.decode("ascii") + "." + _b64url_encode(signature)


def peek_claims(token: str) -> dict[str, Any]:
    """Read the payload WITHOUT verifying the signature.

    Only for transport-level routing (aud checks, jti dedup); receivers must
    still verify before trusting any content.
    """
    parts = token.split(".")
    if len(parts) != 3:
        raise MalformedToken("expected three segments")
    try:
        claims = json.loads(_b64url_decode(parts[1]))
    except (binascii.Error, ValueError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedToken(str(exc)) from None
    if not isinstance(claims, dict):
        raise MalformedToken("payload is not an object")
    return claims


def verify_claims(token: str, keyring: KeyRing) -> dict[str, Any]:
    """Verify signature and return the claims; audience is NOT checked here."""
    parts = token.split(".")
    if len(parts) != 3:
        raise MalformedToken("expected three segments")
    try:
        payload_bytes = _b64url_decode(parts[1])
        signature = _b64url_decode(parts[2])
        _b64url_decode(parts[0])
    except (binascii.Error, ValueError) as exc:
        raise MalformedToken(str(exc)) from None
    try:
        claims = json.loads(payload_bytes)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedToken(f"payload is not JSON: {exc}") from None
    if not isinstance(claims, dict) or "iss" not in claims:
        raise MalformedToken("missing iss claim")
    key = keyring.verification_key(str(claims["iss"]))
    signing_input = (parts[0] + "." + parts[1]).encode("ascii")
    try:
        key.verify(signature, signing_input)
    except InvalidSignature:
        raise BadSignature("signature verification failed") from None
    return claims


@dataclass(frozen=True)
class ContextEvent:
    subject: SubjectId
    entries: ContextValueSet

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"subject": self.subject.to_json()}
        out.update(self.entries.to_json())
        return out

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ContextEvent":
        body = dict(data)
        subject = body.pop("subject", None)
        if subject is None:
            raise MalformedToken("event payload lacks a subject block")
        return cls(subject=SubjectId.from_json(subject), entries=ContextValueSet(body))


@dataclass(frozen=True)
class SecurityEventToken:
    iss: str
    aud: str
    iat: int
    jti: str
    events: Mapping[str, ContextEvent] = field(default_factory=dict)

    def event_for(self, ctx_type: ContextType) -> ContextEvent:
        return self.events[ctx_type.uri]

    def to_claims(self) -> dict[str, Any]:
        return {
            "iss": self.iss,
            "aud": self.aud,
            "iat": self.iat,
            "jti": self.jti,
            "events": {uri: ev.to_json() for uri, ev in self.events.items()},
        }


JtiFactory = Callable[[], str]


def encode_event(
    issuer: str,
    audience: str,
    subject: SubjectId,
    ctx_type: ContextType,
    values: ContextValueSet,
    keyring: KeyRing,
    *,
    clock: Clock | None = None,
    jti_factory: JtiFactory | None = None,
) -> str:
    """Sign one context event as a compact security event token."""
    if len(values) == 0:
        raise ValueError("cannot encode an empty value set")
    clock = clock or SystemClock()
    jti = jti_factory() if jti_factory else uuid.uuid4().hex
    token = SecurityEventToken(
        iss=issuer,
        aud=audience,
        iat=int(clock.now()),
        jti=jti,
        events={ctx_type.uri: ContextEvent(subject=subject, entries=values)},
    )
    return sign_claims(issuer, token.to_claims(), keyring)


def decode_and_verify(
    token: str,
    expected_audience: str,
    keyring: KeyRing,
) -> SecurityEventToken:
    """Parse a context event token, accepting it only if the signature is
    valid and the audience matches."""
    claims = verify_claims(token, keyring)
    for required in ("iss", "aud", "iat", "jti", "events"):
        if required not in claims:
            raise MalformedToken(f"missing {required} claim")
    if claims["aud"] != expected_audience:
        raise AudienceMismatch(
            f"token for {claims['aud']!r}, expected {expected_audience!r}"
        )
    raw_events = claims["events"]
    if not isinstance(raw_events, dict) or not raw_events:
        raise MalformedToken("events must be a non-empty object")
    events = {uri: ContextEvent.from_json(body) for uri, body in raw_events.items()}
    return SecurityEventToken(
        iss=str(claims["iss"]),
        aud=str(claims["aud"]),
        iat=int(claims["iat"]),
        jti=str(claims["jti"]),
        events=events,
    )
