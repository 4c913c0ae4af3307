"""Sessions and the role matrix.

Authentication is a static token registry mapping tokens to principals;
a login exchanges the token for a session id with an expiry, and every
call may present either the session id or the raw token. Authorization
is a data table: action -> roles allowed, covered exhaustively by a
property test.
"""

from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass
from typing import Any, Mapping

from ..clock import SystemClock
from ..errors import NotFound, SessionExpired, Unauthorized
from ..rules import Principal, Role

# action -> roles allowed; every state-mutating endpoint names its action here
ROLE_MATRIX: dict[str, frozenset[Role]] = {
    "spec.validate": frozenset(Role),
    "spec.upload": frozenset({Role.SECURITY_ANALYST, Role.SYSTEM}),
    "calibration.upload": frozenset({Role.SECURITY_ANALYST, Role.SYSTEM}),
    "plant.control": frozenset({Role.PLANT_OPERATOR, Role.SYSTEM}),
    "plant.setpoint": frozenset({Role.PLANT_OPERATOR, Role.SYSTEM}),
    "plant.fault": frozenset({Role.SECURITY_ANALYST}),
    "plant.read": frozenset(Role),
    "runs.execute": frozenset({Role.SECURITY_ANALYST, Role.SYSTEM}),
    "runs.read": frozenset(Role),
    "rules.write": frozenset({Role.SECURITY_ANALYST, Role.SYSTEM}),
    "rules.read": frozenset(Role),
    "provenance.write": frozenset({Role.SECURITY_ANALYST, Role.SYSTEM}),
    "ledger.read": frozenset(Role),
    "verify.run": frozenset({Role.SECURITY_ANALYST, Role.AUDITOR, Role.SYSTEM}),
    "stream.subscribe": frozenset(Role),
}


def authorize(principal: Principal, action: str) -> None:
    allowed = ROLE_MATRIX.get(action)
    if allowed is None:
        raise Unauthorized(f"unknown action {action!r}")
    if not principal.has_any(allowed):
        raise Unauthorized(
            f"{principal.entity_id} (roles {sorted(r.value for r in principal.roles)}) "
            f"may not perform {action}"
        )


@dataclass(frozen=True)
class SessionContext:
    principal: Principal
    session_id: str
    issued_at: float
    expiry: float

    def to_obj(self) -> dict:
        return {
            "session_id": self.session_id,
            "entity_id": self.principal.entity_id,
            "roles": sorted(r.value for r in self.principal.roles),
            "issued_at": self.issued_at,
            "expiry": self.expiry,
        }


def principal_from_token_spec(spec: Mapping[str, Any]) -> Principal:
    return Principal(
        entity_id=str(spec["entity_id"]),
        roles=frozenset(Role(r) for r in spec["roles"]),
    )


class SessionStore:
    def __init__(self, tokens: Mapping[str, dict], ttl: float, clock: Any = None) -> None:
        self._tokens = {t: principal_from_token_spec(s) for t, s in tokens.items()}
        self._ttl = ttl
        self._clock = clock or SystemClock()
        self._sessions: dict[str, SessionContext] = {}
        self._lock = threading.Lock()

    def login(self, token: str) -> SessionContext:
        principal = self._tokens.get(token)
        if principal is None:
            raise NotFound("unknown token")
        now = self._clock.now()
        context = SessionContext(
            principal=principal,
            session_id=secrets.token_hex(16),
            issued_at=now,
            expiry=now + self._ttl,
        )
        with self._lock:
            self._sessions[context.session_id] = context
        return context

    def resolve(self, credential: str) -> Principal:
        """Accept a session id or a raw token; expired sessions are rejected."""
        with self._lock:
            context = self._sessions.get(credential)
        if context is not None:
            if self._clock.now() >= context.expiry:
                with self._lock:
                    self._sessions.pop(credential, None)
                raise SessionExpired(f"session {context.session_id} expired")
            return context.principal
        principal = self._tokens.get(credential)
        if principal is None:
            raise Unauthorized("unknown token or session")
        return principal
