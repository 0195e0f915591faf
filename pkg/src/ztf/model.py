"""Shared domain vocabulary: subjects, context types, scopes, context values.

All types are immutable values; the two operations (scope filtering and
context merging) are pure functions. Context entries are keyed by
scope-qualified strings such as "used:ip:192.0.2.1", where the scope of a
key is its longest declared-scope prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional
from urllib.parse import urlparse

JsonValue = bool | int | float | str


class UnknownScope(Exception):
    """A context entry references a scope the resource never declared."""


@dataclass(frozen=True)
class Identifier:
    """Typed identifier: the format tag fixes the value syntax."""

    format: str
    value: str

    def __post_init__(self) -> None:
        if self.format == "email" and "@" not in self.value:
            raise ValueError(f"email identifier must contain '@': {self.value!r}")
        if not self.value:
            raise ValueError("identifier value must be non-empty")

    def to_json(self) -> dict[str, str]:
        return {"format": self.format, self.format: self.value}

    @classmethod
    def from_json(cls, data: Mapping[str, str]) -> "Identifier":
        fmt = data["format"]
        return cls(format=fmt, value=data[fmt])


@dataclass(frozen=True)
class SubjectId:
    """A user and optionally the device acting for them."""

    user: Identifier
    device: Optional[Identifier] = None

    @classmethod
    def of(cls, email: str, device_cn: str | None = None) -> "SubjectId":
        device = Identifier("cn", device_cn) if device_cn else None
        return cls(user=Identifier("email", email), device=device)

    def user_only(self) -> "SubjectId":
        return SubjectId(user=self.user)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"user": self.user.to_json()}
        if self.device is not None:
            out["device"] = self.device.to_json()
        return out

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "SubjectId":
        device = data.get("device")
        return cls(
            user=Identifier.from_json(data["user"]),
            device=Identifier.from_json(device) if device else None,
        )


@dataclass(frozen=True)
class ContextType:
    """Kind of context, named by an absolute URI unique within its provider."""

    uri: str

    def __post_init__(self) -> None:
        parsed = urlparse(self.uri)
        if not parsed.scheme or not parsed.netloc:
            raise ValueError(f"context type must be an absolute URI: {self.uri!r}")


@dataclass(frozen=True)
class Scope:
    """Named slice of a context resource; grants are expressed in scopes."""

    name: str

    def __post_init__(self) -> None:
        if not self.name or any(c.isspace() for c in self.name):
            raise ValueError(f"scope must be a non-empty token: {self.name!r}")


def scope_of_key(key: str, declared: frozenset[Scope]) -> Optional[Scope]:
    """Longest declared scope that prefixes the key (exact or "<scope>:...")."""
    best: Optional[Scope] = None
    for scope in declared:
        if key == scope.name or key.startswith(scope.name + ":"):
            if best is None or len(scope.name) > len(best.name):
                best = scope
    return best


@dataclass(frozen=True)
class ContextValueSet:
    """Scope-qualified context entries, e.g. {"used:ip:192.0.2.1": True}."""

    entries: Mapping[str, JsonValue] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", dict(self.entries))

    def __iter__(self):
        return iter(self.entries.items())

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> dict[str, JsonValue]:
        return dict(self.entries)


@dataclass(frozen=True)
class ContextResource:
    """One user's context of one type at one provider.

    Every value key must fall under a declared scope; the ctx_id is issued
    by the authorization server and never changes.
    """

    ctx_id: str
    owner: SubjectId
    ctx_type: ContextType
    scopes: frozenset[Scope]
    values: ContextValueSet = field(default_factory=ContextValueSet)
    cap_origin: str = ""

    def __post_init__(self) -> None:
        if not self.scopes:
            raise ValueError("resource must declare at least one scope")
        for key in self.values.entries:
            if scope_of_key(key, self.scopes) is None:
                raise UnknownScope(f"entry {key!r} matches no declared scope")


def filter_by_scopes(resource: ContextResource, allowed: frozenset[Scope]) -> ContextValueSet:
    """Entries whose scope is in `allowed`; unknown scopes match nothing."""
    kept = {
        key: value
        for key, value in resource.values.entries.items()
        if scope_of_key(key, resource.scopes) in allowed
    }
    return ContextValueSet(kept)


def merge_contexts(base: ContextResource, upstream: ContextValueSet) -> ContextResource:
    """Fold upstream entries into a resource; upstream wins on key collision."""
    for key in upstream.entries:
        if scope_of_key(key, base.scopes) is None:
            raise UnknownScope(f"upstream entry {key!r} matches no declared scope")
    merged = dict(base.values.entries)
    merged.update(upstream.entries)
    return ContextResource(
        ctx_id=base.ctx_id,
        owner=base.owner,
        ctx_type=base.ctx_type,
        scopes=base.scopes,
        values=ContextValueSet(merged),
        cap_origin=base.cap_origin,
    )
