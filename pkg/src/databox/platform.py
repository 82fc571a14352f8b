"""Composition root: wires stores, arbiter, manifests, runtime, risk, store.

A ``Platform`` owns one data directory (store files, keyring, comms log,
state snapshot) and one clock. With a seed it is fully deterministic: the
arbiter root secret and every store key derive from the seed, so scenario
replays produce identical audit logs under the virtual clock.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .appstore import AppStore
from .arbiter import Arbiter
from .clock import Clock, RealClock, VirtualClock
from .errors import AuthorizationError, DataboxError, NotFoundError
from .flows import parse_flow
from .manifests import ManifestEngine, Sla
from .risk import RiskEngine
from .runtime import Runtime
from .simulate import DriverManager, SimProfile, schema_for_kind
from .stores import DataSource, RecordSchema, StoreEngine


@dataclass
class UserAccount:
    user_id: str
    name: str
    role: str  # owner | member
    sharing: dict = field(default_factory=dict)


@dataclass
class Notification:
    notif_id: str
    user_id: str
    kind: str
    payload: dict
    created: int
    acknowledged: bool = False

    def to_dict(self):
        return {
            "notif_id": self.notif_id,
            "user_id": self.user_id,
            "kind": self.kind,
            "payload": self.payload,
            "created": self.created,
            "acknowledged": self.acknowledged,
        }


NOTIFICATION_KINDS = {
    "export-preview",
    "sharing-request",
    "app-update",
    "driver-update",
    "resource-contention",
    "consent-withdrawn",
    "app-suspended",
    "pending-delete-consent",
}


class ProcessorStub:
    """Models a data controller's external processor: logs received frames."""

    def __init__(self, recipient: str):
        self.recipient = recipient
        self.receipts: list[dict] = []

    def receive(self, frame: dict) -> dict:
        receipt = {"receipt_no": len(self.receipts) + 1,
                   "recipient": self.recipient,
                   "frame": frame}
        self.receipts.append(receipt)
        return receipt


class Platform:
    def __init__(self, data_dir, seed: int | None = None, clock: Clock | None = None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.clock = clock or (VirtualClock(0) if seed is not None else RealClock())
        self._secret = self._load_or_make_secret()

        def key_source(store_id: str) -> bytes:
            return hmac.new(self._secret, f"store-key:{store_id}".encode(),
                            hashlib.sha256).digest()

        self.stores = StoreEngine(
            self.data_dir / "stores",
            self.data_dir / "keyring.json",
            self.clock,
            key_source=key_source,
        )
        self.arbiter = Arbiter(
            hmac.new(self._secret, b"arbiter-root", hashlib.sha256).digest(), self.clock
        )
        self.manifests = ManifestEngine(
            self.clock, hmac.new(self._secret, b"receipts", hashlib.sha256).digest()
        )
        self.risk = RiskEngine()
        self.appstore = AppStore(self.risk, self.clock)
        self.drivers = DriverManager(self.stores)
        self.processors: dict[str, ProcessorStub] = {}
        self.events: list[dict] = []
        self.accounts: dict[str, UserAccount] = {}
        self.notifications: dict[str, Notification] = {}
        self._notif_count = 0
        self._event_subscribers: list = []
        self.installed: dict[str, str] = {}  # app_id -> sla_id

        self.runtime = Runtime(
            self.arbiter,
            self.stores,
            self.clock,
            self.data_dir / "comms.log",
            dispatch_sink=self._dispatch_sink,
            notify=self.notify,
            event_log=self._event,
        )
        self.stores.verifier = self.arbiter.verify
        self.stores.on_pending_delete = self._on_pending_delete
        self.manifests.on_withdraw = self._on_withdraw

    # -- secrets -------------------------------------------------------

    def _load_or_make_secret(self) -> bytes:
        path = self.data_dir / "platform.secret"
        if path.exists():
            return bytes.fromhex(path.read_text().strip())
        if self.seed is not None:
            secret = hashlib.sha256(f"databox-seed:{self.seed}".encode()).digest()
        else:
            secret = os.urandom(32)
        path.write_text(secret.hex())
        return secret

    # -- events & notifications ----------------------------------------

    def _event(self, kind: str, payload: dict):
        evt = {"kind": kind, "payload": payload, "time": self.clock.now_ms()}
        self.events.append(evt)
        for sub in list(self._event_subscribers):
            sub({"type": "event", **evt})

    def subscribe(self, callback):
        self._event_subscribers.append(callback)
        return lambda: self._event_subscribers.remove(callback)

    def notify(self, user_id: str, kind: str, payload: dict) -> str:
        if kind not in NOTIFICATION_KINDS:
            raise DataboxError(f"unknown notification kind {kind!r}")
        self._notif_count += 1
        notif = Notification(
            notif_id=f"ntf-{self._notif_count}",
            user_id=user_id,
            kind=kind,
            payload=payload,
            created=self.clock.now_ms(),
        )
        self.notifications[notif.notif_id] = notif
        for sub in list(self._event_subscribers):
            sub({"type": "notification", **notif.to_dict()})
        return notif.notif_id

    def acknowledge(self, notif_id: str) -> dict:
        notif = self.notifications.get(notif_id)
        if notif is None:
            raise NotFoundError(f"unknown notification {notif_id!r}")
        notif.acknowledged = True  # idempotent, monotone
        return notif.to_dict()

    def notifications_for(self, user_id: str, unacknowledged_only=False):
        out = [n for n in self.notifications.values() if n.user_id == user_id]
        if unacknowledged_only:
            out = [n for n in out if not n.acknowledged]
        return [n.to_dict() for n in out]

    # -- accounts ------------------------------------------------------

    def create_account(self, name: str, role: str, caller: str | None = None) -> str:
        if role not in ("owner", "member"):
            raise DataboxError(f"unknown role {role!r}")
        if self.accounts:  # bootstrap exempt
            if caller is None or self.accounts.get(caller) is None:
                raise AuthorizationError("caller unknown")
            if self.accounts[caller].role != "owner":
                raise AuthorizationError("only owners may create accounts")
        elif role != "owner":
            raise DataboxError("first account must be an owner")
        user_id = f"user-{len(self.accounts) + 1}-{name.lower().replace(' ', '-')}"
        self.accounts[user_id] = UserAccount(user_id=user_id, name=name, role=role)
        return user_id

    def require_account(self, user_id: str) -> UserAccount:
        acct = self.accounts.get(user_id)
        if acct is None:
            raise AuthorizationError(f"unknown account {user_id!r}")
        return acct

    # -- sources -------------------------------------------------------

    def add_source(self, kind: str, label: str, owner_ids, source_id=None,
                   schema: RecordSchema | None = None) -> str:
        for uid in owner_ids:
            self.require_account(uid)
        sid = source_id or f"{kind}-{label.lower().replace(' ', '-')}"
        schema = schema or schema_for_kind(kind)
        return self.stores.create_store(
            DataSource(source_id=sid, kind=kind, owner_ids=set(owner_ids), label=label),
            schema,
        )

    def start_driver(self, source_id: str, seed: int, cadence_ms: int = 10_000,
                     params: dict | None = None):
        store_id = self.stores.store_for_source(source_id)
        kind = self.stores.store_meta(store_id)["kind"]
        profile = SimProfile(kind=kind, seed=seed, cadence_ms=cadence_ms,
                             params=params or {})
        return self.drivers.run_driver(profile, source_id, self.clock.now_ms())

    def available_kinds(self) -> set[str]:
        return {s["kind"] for s in self.stores.list_stores()}

    # -- install / consent ---------------------------------------------

    def install_app(self, app_id: str, user_id: str, choices: dict) -> Sla:
        """Installation gate: validated manifest + approved SLA or no app."""
        self.require_account(user_id)
        listing = self.appstore.get(app_id)  # re-validates the manifest
        manifest = listing.package["manifest"]
        sla = self.manifests.resolve_choices(manifest, user_id, choices)
        policies = self.manifests.compile(sla)
        flow = parse_flow(listing.package["flow"])
        # Load before registering policies so a refused flow grants nothing.
        self.runtime.load_app(flow, sla, manifest)
        self.arbiter.register_policy(policies, sla.sla_id)
        self.appstore.mark_installed(app_id, user_id)
        self.installed[app_id] = sla.sla_id
        return sla

    def _on_withdraw(self, sla: Sla):
        self.arbiter.revoke(sla.sla_id)
        self.runtime.stop_app(sla.app_id)
        self.notify(sla.user_id, "consent-withdrawn",
                    {"sla_id": sla.sla_id, "app_id": sla.app_id})
        self._event("consent-withdrawn", {"sla_id": sla.sla_id, "app_id": sla.app_id})

    def _on_pending_delete(self, store_id: str, requested_by: str, awaiting: list):
        for uid in awaiting:
            self.notify(uid, "pending-delete-consent",
                        {"store_id": store_id, "requested_by": requested_by})

    # -- export boundary -----------------------------------------------

    def _dispatch_sink(self, frame: dict) -> dict:
        stub = self.processors.setdefault(frame["recipient"],
                                          ProcessorStub(frame["recipient"]))
        return stub.receive(frame)

    def receipts(self, recipient: str | None = None) -> list[dict]:
        if recipient is not None:
            stub = self.processors.get(recipient)
            return list(stub.receipts) if stub else []
        return [r for stub in self.processors.values() for r in stub.receipts]

    # -- ticking -------------------------------------------------------

    def tick(self, now: int | None = None) -> dict:
        now = self.clock.now_ms() if now is None else now
        appended = self.drivers.run_all_until(now)
        app_actions = self.runtime.tick_all(now)
        return {"appended": appended, "apps": app_actions}

    def advance(self, delta_ms: int, step_ms: int | None = None) -> dict:
        """Advance a virtual clock, ticking drivers and apps along the way."""
        if not isinstance(self.clock, VirtualClock):
            raise DataboxError("advance requires a virtual clock")
        totals = {"appended": 0, "ticks": 0}
        step = step_ms or delta_ms
        end = self.clock.now_ms() + delta_ms
        while self.clock.now_ms() < end:
            self.clock.set(min(self.clock.now_ms() + step, end))
            r = self.tick()
            totals["appended"] += r["appended"]
            totals["ticks"] += 1
        return totals

    # -- audit dump ----------------------------------------------------

    def audit_dump(self, redact_wallclock: bool = False) -> list[dict]:
        """All audit records across stores, ordered by (store, audit_seq)."""
        out = []
        for meta in sorted(self.stores.list_stores(), key=lambda s: s["store_id"]):
            for rec in self.stores.read_audit(meta["store_id"], "system"):
                d = rec.to_dict()
                if redact_wallclock:
                    d.pop("time", None)
                out.append(d)
        return out

    # -- state snapshot (CLI persistence) -------------------------------

    def save_state(self):
        state = {
            "accounts": [
                {"user_id": a.user_id, "name": a.name, "role": a.role}
                for a in self.accounts.values()
            ],
            "arbiter": self.arbiter.to_dict(),
            "slas": self.manifests.to_dict(),
            "installed": self.installed,
            "listings": [
                {"package": l.package, "publish_time": l.publish_time,
                 "ratings": l.ratings,
                 "installed_by": sorted(self.appstore.installed_by.get(l.app_id, ()))}
                for l in self.appstore.listings.values()
            ],
            "drivers": [
                {"source_id": sid, "kind": d.profile.kind, "seed": d.profile.seed,
                 "cadence_ms": d.profile.cadence_ms, "params": d.profile.params,
                 "next_t": d.next_t, "stopped": d.stopped}
                for sid, d in self.drivers.drivers.items()
            ],
            "notif_count": self._notif_count,
            "clock_ms": self.clock.now_ms()
            if isinstance(self.clock, VirtualClock) else None,
            "runtime": {
                "export_count": self.runtime._export_count,
                "frame_count": self.runtime._frame_count,
                "exports": [
                    {"item_id": i.item_id, "app_id": i.app_id,
                     "recipient": i.recipient, "payload": i.payload,
                     "staged_at": i.staged_at, "state": i.state,
                     "audit_store_id": i.audit_store_id,
                     "decided_by": i.decided_by}
                    for i in self.runtime.exports.values()
                ],
                "apps": {
                    app_id: {"last_query_ms": a.last_query_ms,
                             "node_state": a.node_state,
                             "last_export_event_ms": a.last_export_event_ms,
                             "suspended": a.suspended,
                             "terminated": a.terminated}
                    for app_id, a in self.runtime.apps.items()
                },
            },
        }
        (self.data_dir / "state.json").write_text(json.dumps(state, sort_keys=True))

    def load_state(self):
        path = self.data_dir / "state.json"
        if not path.exists():
            return
        state = json.loads(path.read_text())
        if state.get("clock_ms") is not None and isinstance(self.clock, VirtualClock):
            self.clock.set(max(self.clock.now_ms(), state["clock_ms"]))
        for a in state.get("accounts", []):
            self.accounts[a["user_id"]] = UserAccount(
                user_id=a["user_id"], name=a["name"], role=a["role"])
        self.arbiter.load_dict(state.get("arbiter", {"policies": []}))
        self.manifests.load_dict(state.get("slas", {}))
        self._notif_count = state.get("notif_count", 0)
        for d in state.get("drivers", []):
            profile = SimProfile(kind=d["kind"], seed=d["seed"],
                                 cadence_ms=d["cadence_ms"], params=d["params"])
            drv = self.drivers.run_driver(profile, d["source_id"], d["next_t"])
            drv.stopped = d["stopped"]
        for entry in state.get("listings", []):
            listing = self.appstore.publish(entry["package"])
            listing.publish_time = entry["publish_time"]
            for user, stars in entry.get("ratings", {}).items():
                listing.ratings[user] = stars
            listing.stars_count = len(listing.ratings)
            listing.stars_total = sum(listing.ratings.values())
            for user in entry.get("installed_by", []):
                self.appstore.mark_installed(listing.app_id, user)
        self.installed = dict(state.get("installed", {}))
        for app_id, sla_id in self.installed.items():
            sla = self.manifests.slas.get(sla_id)
            listing = self.appstore.listings.get(app_id)
            if sla and listing and sla.withdrawn_at is None:
                self.runtime.load_app(parse_flow(listing.package["flow"]), sla,
                                      listing.package["manifest"])
        rt = state.get("runtime", {})
        self.runtime._export_count = rt.get("export_count", 0)
        self.runtime._frame_count = rt.get("frame_count", 0)
        from .runtime import ExportItem

        for d in rt.get("exports", []):
            self.runtime.exports[d["item_id"]] = ExportItem(**d)
        for app_id, a in rt.get("apps", {}).items():
            app = self.runtime.apps.get(app_id)
            if app is None:
                continue
            app.last_query_ms = dict(a["last_query_ms"])
            app.node_state = dict(a["node_state"])
            app.last_export_event_ms = a["last_export_event_ms"]
            app.suspended = a["suspended"]
            app.terminated = a["terminated"]
