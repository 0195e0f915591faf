"""Virtual event streams from a context transmitter to its receivers.

A receiver configures a stream (push or poll), asks for subjects to be
added, and gets a signed event token whenever an approved subject's
context changes. Adding a subject is gated on proof of authorization: the
transmitter introspects the presented requesting-party token and approves
only if it covers every context type the stream requests for that subject.

Delivery is strictly FIFO per stream: a failed push blocks the queue so
order is preserved, and retries are at-least-once with receiver-side jti
dedup. Pausing stops delivery but keeps queued and retained tokens.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .clock import Clock, SystemClock
from .codec import peek_claims
from .ids import IdFactory
from .model import SubjectId


class UnknownStream(Exception):
    pass


class UnsupportedContextType(Exception):
    pass


class DuplicateStream(Exception):
    pass


class SubjectNotApproved(Exception):
    pass


class StreamPaused(Exception):
    pass


class DeliveryFailed(Exception):
    pass


class WrongDeliveryMode(Exception):
    pass


@dataclass
class Delivery:
    mode: str  # "push" | "poll"
    endpoint: Optional[str] = None

    def __post_init__(self) -> None:
        if self.mode not in ("push", "poll"):
            raise ValueError(f"unknown delivery mode {self.mode!r}")
        if self.mode == "push" and not self.endpoint:
            raise ValueError("push delivery requires an endpoint")


@dataclass
class StreamConfig:
    stream_id: str
    transmitter: str
    receiver: str
    delivery: Delivery
    requested_ctx_types: frozenset[str]
    status: str = "enabled"  # enabled | paused


@dataclass
class SubjectEntry:
    subject: SubjectId
    state: str  # pending | approved | rejected
    rpt_ref: Optional[str] = None
    reason: Optional[str] = None


@dataclass
class DeliveryReceipt:
    stream_id: str
    subject: SubjectId
    seq: int
    jti: str
    status: str  # delivered | queued | retained


@dataclass
class _Outbound:
    subject: SubjectId
    token: str
    jti: str
    seq: int
    attempts: int = 0
    next_attempt_at: float = 0.0


# Called with (endpoint, token); raises on failure.
Pusher = Callable[[str, str], None]
# Returns the authorization-server introspection document for a token.
Introspector = Callable[[str], dict[str, Any]]
# Resolves the registered ctx_id for (subject, ctx_type uri), None if unknown.
CtxIdResolver = Callable[[SubjectId, str], Optional[str]]


class StreamManager:
    def __init__(
        self,
        transmitter: str,
        served_types: set[str],
        *,
        ids: IdFactory | None = None,
        clock: Clock | None = None,
        introspect: Introspector,
        pusher: Pusher,
        ctx_id_resolver: CtxIdResolver,
        max_backoff: float = 30.0,
    ):
        self.transmitter = transmitter
        self.served_types = set(served_types)
        self.ids = ids or IdFactory()
        self.clock = clock or SystemClock()
        self.introspect = introspect
        self.pusher = pusher
        self.ctx_id_resolver = ctx_id_resolver
        self.max_backoff = max_backoff

        self._registry_lock = threading.RLock()
        self._streams: dict[str, StreamConfig] = {}
        self._subjects: dict[str, dict[SubjectId, SubjectEntry]] = {}
        self._outbox: dict[str, list[_Outbound]] = {}
        self._queues: dict[str, list[str]] = {}
        self._seq: dict[str, int] = {}
        self._stream_locks: dict[str, threading.RLock] = {}
        self.transmit_log: list[dict[str, Any]] = []

    # -- stream lifecycle -----------------------------------------------------

    def create_stream(
        self,
        receiver: str,
        delivery: Delivery,
        requested_ctx_types: frozenset[str],
    ) -> StreamConfig:
        if not requested_ctx_types:
            raise ValueError("a stream must request at least one context type")
        unsupported = requested_ctx_types - self.served_types
        if unsupported:
            raise UnsupportedContextType(", ".join(sorted(unsupported)))
        with self._registry_lock:
            for stream in self._streams.values():
                if (
                    stream.receiver == receiver
                    and stream.requested_ctx_types == requested_ctx_types
                ):
                    raise DuplicateStream(stream.stream_id)
            config = StreamConfig(
                stream_id=self.ids.new_id("stream"),
                transmitter=self.transmitter,
                receiver=receiver,
                delivery=delivery,
                requested_ctx_types=frozenset(requested_ctx_types),
            )
            self._streams[config.stream_id] = config
            self._subjects[config.stream_id] = {}
            self._outbox[config.stream_id] = []
            self._queues[config.stream_id] = []
            self._seq[config.stream_id] = 0
            self._stream_locks[config.stream_id] = threading.RLock()
            return config

    def get_stream(self, stream_id: str) -> StreamConfig:
        with self._registry_lock:
            stream = self._streams.get(stream_id)
            if stream is None:
                raise UnknownStream(stream_id)
            return stream

    def list_streams(self) -> list[StreamConfig]:
        with self._registry_lock:
            return list(self._streams.values())

    def update_stream(
        self, stream_id: str, *, endpoint: Optional[str] = None
    ) -> StreamConfig:
        stream = self.get_stream(stream_id)
        if endpoint is not None:
            if stream.delivery.mode != "push":
                raise WrongDeliveryMode("only push streams have an endpoint")
            stream.delivery.endpoint = endpoint
        return stream

    def pause_stream(self, stream_id: str) -> StreamConfig:
        stream = self.get_stream(stream_id)
        stream.status = "paused"
        return stream

    def resume_stream(self, stream_id: str) -> StreamConfig:
        stream = self.get_stream(stream_id)
        stream.status = "enabled"
        if stream.delivery.mode == "push":
            self._drain(stream, force=True)
        return stream

    def delete_stream(self, stream_id: str) -> None:
        with self._registry_lock:
            if stream_id not in self._streams:
                raise UnknownStream(stream_id)
            del self._streams[stream_id]
            del self._subjects[stream_id]
            del self._outbox[stream_id]
            del self._queues[stream_id]
            del self._stream_locks[stream_id]

    # -- subjects ----------------------------------------------------------------

    def add_subject(
        self,
        stream_id: str,
        subject: SubjectId,
        authorization_proof: str | None = None,
    ) -> SubjectEntry:
        stream = self.get_stream(stream_id)
        if stream.status != "enabled":
            raise StreamPaused(stream_id)
        subject = subject.user_only()
        with self._stream_locks[stream_id]:
            existing = self._subjects[stream_id].get(subject)
            if existing is not None:
                return existing
            if authorization_proof is None:
                entry = SubjectEntry(subject=subject, state="pending")
            else:
                approved, reason = self._authorizes(
                    stream, subject, authorization_proof
                )
                entry = SubjectEntry(
                    subject=subject,
                    state="approved" if approved else "rejected",
                    rpt_ref=authorization_proof,
                    reason=reason,
                )
            self._subjects[stream_id][subject] = entry
            return entry

    def _authorizes(
        self, stream: StreamConfig, subject: SubjectId, proof: str
    ) -> tuple[bool, Optional[str]]:
        info = self.introspect(proof)
        if not info.get("active"):
            return False, "authorization token inactive"
        if info.get("requesting_party") != stream.receiver:
            return False, "token issued to a different requesting party"
        granted = {g["ctx_id"]: set(g["scopes"]) for g in info.get("grants", [])}
        for type_uri in stream.requested_ctx_types:
            ctx_id = self.ctx_id_resolver(subject, type_uri)
            if ctx_id is None:
                return False, f"no registered context of type {type_uri}"
            if not granted.get(ctx_id):
                return False, f"grant does not cover {type_uri}"
        return True, None

    def subject_entry(self, stream_id: str, subject: SubjectId) -> SubjectEntry:
        self.get_stream(stream_id)
        entry = self._subjects[stream_id].get(subject.user_only())
        if entry is None:
            raise SubjectNotApproved(f"{subject} not on stream {stream_id}")
        return entry

    def granted_scopes(self, stream_id: str, subject: SubjectId, ctx_id: str) -> set[str]:
        """Current grant for this stream's subject, via live introspection."""
        entry = self.subject_entry(stream_id, subject)
        if entry.state != "approved" or entry.rpt_ref is None:
            return set()
        info = self.introspect(entry.rpt_ref)
        if not info.get("active"):
            return set()
        for grant in info.get("grants", []):
            if grant["ctx_id"] == ctx_id:
                return set(grant["scopes"])
        return set()

    # -- transmission ----------------------------------------------------------------

    def transmit(
        self, stream_id: str, subject: SubjectId, token: str
    ) -> DeliveryReceipt:
        stream = self.get_stream(stream_id)
        subject = subject.user_only()
        entry = self._subjects[stream_id].get(subject)
        if entry is None or entry.state != "approved":
            raise SubjectNotApproved(f"{subject} not approved on {stream_id}")
        if stream.status != "enabled":
            raise StreamPaused(stream_id)
        claims = peek_claims(token)
        if claims.get("aud") != stream.receiver:
            raise ValueError(
                f"token audience {claims.get('aud')!r} is not the stream receiver"
            )
        jti = str(claims.get("jti"))
        with self._stream_locks[stream_id]:
            self._seq[stream_id] += 1
            seq = self._seq[stream_id]
            self.transmit_log.append(
                {
                    "stream_id": stream_id,
                    "receiver": stream.receiver,
                    "subject": subject.user.value,
                    "jti": jti,
                    "seq": seq,
                    "token": token,
                }
            )
            if stream.delivery.mode == "poll":
                self._queues[stream_id].append(token)
                return DeliveryReceipt(stream_id, subject, seq, jti, "queued")
            self._outbox[stream_id].append(
                _Outbound(subject=subject, token=token, jti=jti, seq=seq)
            )
            self._drain(stream)
            if any(o.jti == jti for o in self._outbox[stream_id]):
                raise DeliveryFailed(
                    f"push to {stream.delivery.endpoint} failed; token retained"
                )
            return DeliveryReceipt(stream_id, subject, seq, jti, "delivered")

    def _drain(self, stream: StreamConfig, force: bool = False) -> int:
        """Push retained tokens in order; a failure blocks the rest."""
        delivered = 0
        outbox = self._outbox[stream.stream_id]
        with self._stream_locks[stream.stream_id]:
            while outbox and stream.status == "enabled":
                head = outbox[0]
                if not force and head.next_attempt_at > self.clock.now():
                    break
                try:
                    self.pusher(stream.delivery.endpoint, head.token)
                except Exception:
                    head.attempts += 1
                    backoff = min(2.0 ** head.attempts, self.max_backoff)
                    head.next_attempt_at = self.clock.now() + backoff
                    break
                outbox.pop(0)
                delivered += 1
        return delivered

    def flush(self, force: bool = True) -> int:
        """Retry retained pushes across all streams; returns deliveries made."""
        total = 0
        with self._registry_lock:
            streams = list(self._streams.values())
        for stream in streams:
            if stream.delivery.mode == "push" and stream.status == "enabled":
                total += self._drain(stream, force=force)
        return total

    def pending_count(self) -> int:
        with self._registry_lock:
            return sum(len(v) for v in self._outbox.values())

    def poll(self, stream_id: str) -> list[str]:
        stream = self.get_stream(stream_id)
        if stream.delivery.mode != "poll":
            raise WrongDeliveryMode(stream_id)
        with self._stream_locks[stream_id]:
            if stream.status != "enabled":
                return []
            drained = self._queues[stream_id]
            self._queues[stream_id] = []
            return drained

    # -- the update hook -----------------------------------------------------------

    def on_context_update(
        self,
        subject: SubjectId,
        ctx_type_uri: str,
        build_token: Callable[[str, set[str]], Optional[str]],
    ) -> list[dict[str, Any]]:
        """Fan an update out to every enabled stream with this subject approved.

        `build_token(receiver, allowed_scopes)` returns the signed event
        (scope-filtered by the caller) or None when nothing is visible at
        those scopes.
        """
        subject = subject.user_only()
        results: list[dict[str, Any]] = []
        with self._registry_lock:
            streams = list(self._streams.values())
        for stream in streams:
            if stream.status != "enabled":
                continue
            if ctx_type_uri not in stream.requested_ctx_types:
                continue
            entry = self._subjects[stream.stream_id].get(subject)
            if entry is None or entry.state != "approved":
                continue
            ctx_id = self.ctx_id_resolver(subject, ctx_type_uri)
            allowed = (
                self.granted_scopes(stream.stream_id, subject, ctx_id)
                if ctx_id
                else set()
            )
            if not allowed:
                results.append(
                    {"stream_id": stream.stream_id, "status": "skipped-no-grant"}
                )
                continue
            token = build_token(stream.receiver, allowed)
            if token is None:
                results.append(
                    {"stream_id": stream.stream_id, "status": "skipped-empty"}
                )
                continue
            try:
                receipt = self.transmit(stream.stream_id, subject, token)
                results.append(
                    {"stream_id": stream.stream_id, "status": receipt.status}
                )
            except DeliveryFailed as exc:
                results.append(
                    {
                        "stream_id": stream.stream_id,
                        "status": "delivery-failed",
                        "error": str(exc),
                    }
                )
        return results
