"""Request/response models for the service APIs."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel


class PatRequest(BaseModel):
    cap: str
    owner: str


class RegisterResourceRequest(BaseModel):
    ctx_type: str
    scopes: list[str]


class PermissionRequest(BaseModel):
    ctx_id: str
    scopes: list[str]


class ClaimsBody(BaseModel):
    requesting_party: str
    attestations: dict[str, Any] = {}


class TokenRequest(BaseModel):
    ticket: str
    claims: ClaimsBody


class IntrospectRequest(BaseModel):
    token: str


class PolicyRuleRequest(BaseModel):
    requesting_party: str
    ctx_type: str
    scopes: list[str] = []


class LoginRequest(BaseModel):
    user: str
    secret: str


class ConsentResponseRequest(BaseModel):
    approve: bool


class ObserveRequest(BaseModel):
    subject: str
    ctx_type: str
    payload: dict[str, Any]
    device: Optional[str] = None


class DeliveryBody(BaseModel):
    mode: str
    endpoint: Optional[str] = None


class CreateStreamRequest(BaseModel):
    receiver: str
    delivery: DeliveryBody
    ctx_types: list[str]


class AddSubjectRequest(BaseModel):
    subject: str
    rpt: Optional[str] = None


class SubscribeUpstreamRequest(BaseModel):
    owner: str
    upstream_cap: str
    upstream_ctx_type: str
    fold_into: str
    upstream_ctx_id: str
    scopes: list[str]
    push_endpoint: str


class RegisterCtxIdRequest(BaseModel):
    cap: str
    ctx_id: str


class AcquireRequest(BaseModel):
    user: str
    cap: str
    ctx_type: str
    scopes: list[str]


class IdTokenRequest(BaseModel):
    issuer: str
    user: str
    credential: Optional[str] = None
    audience: str


class CompromiseRequest(BaseModel):
    issuer: str
    flag: bool
