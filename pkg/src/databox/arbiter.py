"""Policy decision point.

Registers compiled policies, mints caveat-scoped bearer tokens, verifies
every store request against them, and revokes on withdrawal or termination.

Token wire form (version 1): ``dbx1.<base64 caveat frames>.<64 hex mac>``.
The caveat frames are newline-joined ``key=value`` pairs in mint order. The
mac is an HMAC-SHA256 chain: ``sig = HMAC(root, token_id)`` then
``sig = HMAC(sig, caveat_line)`` for each caveat, so any alteration of any
caveat (or truncation/extension of the list) invalidates the mac while
verification stays offline against the root secret alone.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import itertools
from dataclasses import dataclass, field

from .clock import Clock
from .errors import DataboxError, NotFoundError

TOKEN_VERSION = "dbx1"

DENY_REASONS = (
    "bad-mac",
    "expired",
    "revoked",
    "wrong-store",
    "action-not-granted",
    "rate-exceeded",
    "malformed",
)


@dataclass
class Policy:
    policy_id: str
    sla_id: str
    app_id: str
    store_id: str
    actions: frozenset[str]  # subset of {query, actuate, export-stage}
    max_sample_period_ms: int
    expiry: int
    max_report_period_ms: int | None = None  # absent for no-export apps
    revoked: bool = False

    def __post_init__(self):
        if not self.actions:
            raise DataboxError("policy must grant at least one action")
        bad = self.actions - {"query", "actuate", "export-stage"}
        if bad:
            raise DataboxError(f"unknown policy actions {sorted(bad)}")

    def to_dict(self):
        return {
            "policy_id": self.policy_id,
            "sla_id": self.sla_id,
            "app_id": self.app_id,
            "store_id": self.store_id,
            "actions": sorted(self.actions),
            "max_sample_period_ms": self.max_sample_period_ms,
            "max_report_period_ms": self.max_report_period_ms,
            "expiry": self.expiry,
            "revoked": self.revoked,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            policy_id=d["policy_id"],
            sla_id=d["sla_id"],
            app_id=d["app_id"],
            store_id=d["store_id"],
            actions=frozenset(d["actions"]),
            max_sample_period_ms=d["max_sample_period_ms"],
            max_report_period_ms=d.get("max_report_period_ms"),
            expiry=d["expiry"],
            revoked=d.get("revoked", False),
        )


@dataclass(frozen=True)
class AccessToken:
    token_id: str
    caveats: tuple[tuple[str, str], ...]
    mac: bytes

    def caveat(self, key: str) -> str | None:
        for k, v in self.caveats:
            if k == key:
                return v
        return None

    def serialize(self) -> str:
        lines = [self.token_id] + [f"{k}={v}" for k, v in self.caveats]
        body = base64.urlsafe_b64encode("\n".join(lines).encode()).decode()
        return f"{TOKEN_VERSION}.{body}.{self.mac.hex()}"

    @classmethod
    def parse(cls, wire: str) -> "AccessToken":
        parts = wire.split(".")
        if len(parts) != 3 or parts[0] != TOKEN_VERSION:
            raise DataboxError("malformed token", code="MALFORMED-TOKEN")
        try:
            lines = base64.urlsafe_b64decode(parts[1].encode()).decode().split("\n")
            mac = bytes.fromhex(parts[2])
        except Exception as exc:
            raise DataboxError("malformed token", code="MALFORMED-TOKEN") from exc
        if len(mac) != 32 or not lines:
            raise DataboxError("malformed token", code="MALFORMED-TOKEN")
        caveats = []
        for line in lines[1:]:
            if "=" not in line:
                raise DataboxError("malformed token", code="MALFORMED-TOKEN")
            k, v = line.split("=", 1)
            caveats.append((k, v))
        return cls(token_id=lines[0], caveats=tuple(caveats), mac=mac)


def token_fingerprint(wire: str) -> str:
    return hashlib.sha256(wire.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str | None = None  # one of DENY_REASONS when not allowed
    app_id: str | None = None
    policy_id: str | None = None
    token_fp: str | None = None


@dataclass
class _Grant:
    last_allowed_ms: int


class Arbiter:
    def __init__(self, root_secret: bytes, clock: Clock):
        if len(root_secret) < 16:
            raise DataboxError("root secret too short")
        self._root = root_secret
        self.clock = clock
        self._policies: dict[str, Policy] = {}
        self._grants: dict[tuple[str, str], _Grant] = {}  # (app, store) -> ledger
        self._minted = itertools.count(1)

    # -- mac chain -----------------------------------------------------

    def _chain(self, token_id: str, caveats) -> bytes:
        sig = hmac.new(self._root, token_id.encode(), hashlib.sha256).digest()
        for k, v in caveats:
            sig = hmac.new(sig, f"{k}={v}".encode(), hashlib.sha256).digest()
        return sig

    # -- policy lifecycle ----------------------------------------------

    def register_policy(self, policies: list[Policy], sla_id: str) -> list[str]:
        ids = []
        for pol in policies:
            if pol.sla_id != sla_id:
                raise DataboxError("policy sla_id mismatch")
            # Conflicting active policy for the same (app, store): newer wins.
            for other in self._policies.values():
                if (
                    other.policy_id != pol.policy_id
                    and not other.revoked
                    and (other.app_id, other.store_id) == (pol.app_id, pol.store_id)
                ):
                    other.revoked = True
            self._policies[pol.policy_id] = pol
            ids.append(pol.policy_id)
        return ids

    def active_policy(self, app_id: str, store_id: str) -> Policy | None:
        now = self.clock.now_ms()
        for pol in self._policies.values():
            if (
                pol.app_id == app_id
                and pol.store_id == store_id
                and not pol.revoked
                and now < pol.expiry
            ):
                return pol
        return None

    def policies_for_app(self, app_id: str) -> list[Policy]:
        return [p for p in self._policies.values() if p.app_id == app_id]

    def revoke(self, scope: str) -> int:
        """Revoke all policies whose sla_id or app_id matches ``scope``."""
        n = 0
        for pol in self._policies.values():
            if not pol.revoked and scope in (pol.sla_id, pol.app_id):
                pol.revoked = True
                n += 1
        return n

    # -- tokens --------------------------------------------------------

    def mint_token(self, app_id: str, store_id: str) -> str:
        pol = self.active_policy(app_id, store_id)
        if pol is None:
            raise NotFoundError(f"no active policy for ({app_id}, {store_id})",
                                code="NO-ACTIVE-POLICY")
        token_id = f"tok-{pol.policy_id}-{next(self._minted)}"
        caveats = [
            ("app_id", pol.app_id),
            ("store_id", pol.store_id),
            ("actions", ",".join(sorted(pol.actions))),
            ("max_sample_period_ms", str(pol.max_sample_period_ms)),
            ("expiry", str(pol.expiry)),
            ("policy_id", pol.policy_id),
            ("sla_id", pol.sla_id),
        ]
        if pol.max_report_period_ms is not None:
            caveats.append(("max_report_period_ms", str(pol.max_report_period_ms)))
        mac = self._chain(token_id, caveats)
        return AccessToken(token_id=token_id, caveats=tuple(caveats), mac=mac).serialize()

    # -- verification --------------------------------------------------

    def decide(self, wire: str, store_id: str, action: str, now: int,
               last_granted_time: int | None = None) -> Decision:
        """Pure decision over (token, request, policy table, grant ledger).

        The caller-supplied ``last_granted_time`` is cross-checked against the
        arbiter's own grant ledger; the ledger wins when it is later.
        """
        fp = token_fingerprint(wire)
        try:
            token = AccessToken.parse(wire)
        except DataboxError:
            return Decision(False, "malformed", token_fp=fp)
        app_id = token.caveat("app_id")
        if not hmac.compare_digest(token.mac, self._chain(token.token_id, token.caveats)):
            return Decision(False, "bad-mac", app_id=app_id, token_fp=fp)
        policy_id = token.caveat("policy_id")
        pol = self._policies.get(policy_id)
        if pol is None or pol.revoked:
            return Decision(False, "revoked", app_id=app_id, token_fp=fp)
        if token.caveat("store_id") != store_id or pol.store_id != store_id:
            return Decision(False, "wrong-store", app_id=app_id, token_fp=fp)
        granted = (token.caveat("actions") or "").split(",")
        if action not in granted or action not in pol.actions:
            return Decision(False, "action-not-granted", app_id=app_id, token_fp=fp)
        try:
            expiry = int(token.caveat("expiry") or "")
            period = int(token.caveat("max_sample_period_ms") or "")
        except ValueError:
            return Decision(False, "malformed", app_id=app_id, token_fp=fp)
        if now >= min(expiry, pol.expiry):
            return Decision(False, "expired", app_id=app_id, token_fp=fp)
        if action == "query":
            ledger = self._grants.get((pol.app_id, store_id))
            last = max(
                [t for t in (last_granted_time,
                             ledger.last_allowed_ms if ledger else None) if t is not None],
                default=None,
            )
            effective_period = max(period, pol.max_sample_period_ms)
            if last is not None and now - last < effective_period:
                return Decision(False, "rate-exceeded", app_id=app_id, token_fp=fp)
        return Decision(True, app_id=pol.app_id, policy_id=pol.policy_id, token_fp=fp)

    def verify(self, wire: str, store_id: str, action: str, now: int,
               last_granted_time: int | None = None) -> Decision:
        """Decide and, on an allowed query, record the grant in the ledger."""
        decision = self.decide(wire, store_id, action, now, last_granted_time)
        if decision.allowed and action == "query":
            self._grants[(decision.app_id, store_id)] = _Grant(now)
        return decision

    # -- state snapshot ------------------------------------------------

    def to_dict(self):
        return {
            "policies": [p.to_dict() for p in self._policies.values()],
            "grants": {f"{a}|{s}": g.last_allowed_ms for (a, s), g in self._grants.items()},
            "minted": next(self._minted),
        }

    def load_dict(self, d):
        self._policies = {p["policy_id"]: Policy.from_dict(p) for p in d["policies"]}
        self._grants = {
            tuple(k.split("|", 1)): _Grant(v) for k, v in d.get("grants", {}).items()
        }
        self._minted = itertools.count(d.get("minted", 1))
