"""Per-source data stores.

One isolated store per data source: an append-only, encrypted record log plus
a sidecar audit log, each with its own key. Every operation on a store emits
exactly one audit record; arbiter denials emit a token-denied record.

File layout (documented so tests can verify cross-key decryption failure):
each file is a sequence of frames, one frame per record:

    [4-byte big-endian payload length][12-byte nonce][AES-GCM ciphertext]

The plaintext of each frame is canonical JSON of the record. Nonces are the
frame index, big-endian, zero-padded to 12 bytes; frames are never rewritten
in place except by redact/clear, which rewrite the whole record file (the
audit file is strictly append-only).
"""

from __future__ import annotations

import json
import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .clock import Clock
from .errors import (
    AuthorizationError,
    DataboxError,
    DuplicateError,
    NotFoundError,
    SchemaMismatchError,
    TokenDeniedError,
)

SOURCE_KINDS = (
    "energy-meter",
    "door-sensor",
    "presence",
    "alarm",
    "microphone-level",
    "generic",
)

# Kinds whose devices accept commands; the rest are read-only sensors.
ACTUATABLE_KINDS = {"alarm", "generic"}

SCALAR_TYPES = {"integer", "real", "boolean", "text"}

AUDIT_ACTIONS = (
    "query",
    "append",
    "actuate",
    "export",
    "redact",
    "clear",
    "delete",
    "token-denied",
)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class RecordSchema:
    """Ordered field list; every record additionally carries a ms timestamp."""

    fields: tuple[tuple[str, str, str], ...]  # (name, scalar type, unit)

    def __post_init__(self):
        names = [f[0] for f in self.fields]
        if len(set(names)) != len(names):
            raise DataboxError("duplicate field names in schema")
        for _, typ, _ in self.fields:
            if typ not in SCALAR_TYPES:
                raise DataboxError(f"unknown scalar type {typ!r}")

    def check(self, values) -> None:
        if len(values) != len(self.fields):
            raise SchemaMismatchError(
                f"expected {len(self.fields)} values, got {len(values)}"
            )
        for v, (name, typ, _) in zip(values, self.fields):
            ok = (
                (typ == "integer" and isinstance(v, int) and not isinstance(v, bool))
                or (typ == "real" and isinstance(v, (int, float)) and not isinstance(v, bool))
                or (typ == "boolean" and isinstance(v, bool))
                or (typ == "text" and isinstance(v, str))
            )
            if not ok:
                raise SchemaMismatchError(f"field {name!r} expects {typ}, got {v!r}")

    def to_dict(self):
        return {"fields": [list(f) for f in self.fields]}

    @classmethod
    def from_dict(cls, d):
        return cls(fields=tuple(tuple(f) for f in d["fields"]))


@dataclass
class DataSource:
    source_id: str
    kind: str
    owner_ids: set[str]
    label: str = ""
    schema_id: str = ""

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise DataboxError(f"unknown source kind {self.kind!r}")
        if not self.owner_ids:
            raise DataboxError("owner_ids must be non-empty")


@dataclass(frozen=True)
class DataRecord:
    seq_no: int
    timestamp: int
    values: tuple
    redacted: bool = False

    def to_dict(self):
        return {
            "seq": self.seq_no,
            "t": self.timestamp,
            "values": None if self.redacted else list(self.values),
            "redacted": self.redacted,
        }

    @classmethod
    def from_dict(cls, d):
        redacted = d.get("redacted", False)
        values = () if redacted else tuple(d["values"])
        return cls(seq_no=d["seq"], timestamp=d["t"], values=values, redacted=redacted)


@dataclass(frozen=True)
class AuditRecord:
    audit_seq: int
    time: int
    actor: tuple[str, str]  # (type, id); type ∈ {app, user, driver, system}
    action: str
    store_id: str
    detail: dict

    def to_dict(self):
        return {
            "audit_seq": self.audit_seq,
            "time": self.time,
            "actor": list(self.actor),
            "action": self.action,
            "store_id": self.store_id,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            audit_seq=d["audit_seq"],
            time=d["time"],
            actor=tuple(d["actor"]),
            action=d["action"],
            store_id=d["store_id"],
            detail=d["detail"],
        )


@dataclass
class QuerySpec:
    t_start: int
    t_end: int
    max_rows: int | None = None
    aggregation: str = "none"  # none | mean | count

    def to_dict(self):
        return {
            "t_start": self.t_start,
            "t_end": self.t_end,
            "max_rows": self.max_rows,
            "aggregation": self.aggregation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            t_start=d["t_start"],
            t_end=d["t_end"],
            max_rows=d.get("max_rows"),
            aggregation=d.get("aggregation", "none"),
        )


class _FrameFile:
    """Length-prefixed AES-GCM frame file; frame index is the nonce."""

    def __init__(self, path: Path, key: bytes):
        self.path = path
        self.key = key

    @staticmethod
    def _nonce(index: int) -> bytes:
        return index.to_bytes(12, "big")

    def append(self, obj, index: int) -> None:
        ct = AESGCM(self.key).encrypt(self._nonce(index), canonical_json(obj).encode(), None)
        payload = self._nonce(index) + ct
        with self.path.open("ab") as fh:
            fh.write(struct.pack(">I", len(payload)))
            fh.write(payload)

    def read_all(self) -> list:
        if not self.path.exists():
            return []
        out = []
        data = self.path.read_bytes()
        off = 0
        while off < len(data):
            (length,) = struct.unpack_from(">I", data, off)
            off += 4
            payload = data[off : off + length]
            off += length
            nonce, ct = payload[:12], payload[12:]
            pt = AESGCM(self.key).decrypt(nonce, ct, None)
            out.append(json.loads(pt))
        return out

    def rewrite(self, objs: list) -> None:
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with tmp.open("wb") as fh:
            for i, obj in enumerate(objs):
                ct = AESGCM(self.key).encrypt(self._nonce(i), canonical_json(obj).encode(), None)
                payload = self._nonce(i) + ct
                fh.write(struct.pack(">I", len(payload)))
                fh.write(payload)
        os.replace(tmp, self.path)


@dataclass
class _Store:
    store_id: str
    source: DataSource
    schema: RecordSchema
    records: list[DataRecord] = field(default_factory=list)
    audit: list[AuditRecord] = field(default_factory=list)
    deleted: bool = False
    pending_delete_approvals: set[str] | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class StoreEngine:
    """Maintains the manifold of per-source stores and their audit logs.

    ``verifier`` is the arbiter's decision function, wired in by the platform;
    ``on_pending_delete`` lets the gateway raise consent notifications.
    """

    def __init__(self, data_dir, keyring_path, clock: Clock, key_source=None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.keyring_path = Path(keyring_path)
        self.clock = clock
        self._key_source = key_source or (lambda store_id: os.urandom(32))
        self._keyring: dict[str, str] = {}
        self._stores: dict[str, _Store] = {}
        self._drivers: dict[str, str] = {}  # source_id -> driver id
        self.verifier = None
        self.on_pending_delete = None
        self._load_keyring()
        self._load_stores()

    # -- persistence ---------------------------------------------------

    def _load_keyring(self):
        if self.keyring_path.exists():
            self._keyring = json.loads(self.keyring_path.read_text())

    def _save_keyring(self):
        self.keyring_path.parent.mkdir(parents=True, exist_ok=True)
        self.keyring_path.write_text(canonical_json(self._keyring))

    def _key(self, store_id: str) -> bytes:
        return bytes.fromhex(self._keyring[store_id])

    def _meta_path(self, store_id):
        return self.data_dir / f"{store_id}.meta"

    def _record_file(self, store_id) -> _FrameFile:
        return _FrameFile(self.data_dir / f"{store_id}.box", self._key(store_id))

    def _audit_file(self, store_id) -> _FrameFile:
        return _FrameFile(self.data_dir / f"{store_id}.audit", self._key(store_id))

    def _load_stores(self):
        for meta in sorted(self.data_dir.glob("*.meta")):
            m = json.loads(meta.read_text())
            store_id = m["store_id"]
            source = DataSource(
                source_id=m["source"]["source_id"],
                kind=m["source"]["kind"],
                owner_ids=set(m["source"]["owner_ids"]),
                label=m["source"].get("label", ""),
                schema_id=m["source"].get("schema_id", ""),
            )
            st = _Store(
                store_id=store_id,
                source=source,
                schema=RecordSchema.from_dict(m["schema"]),
                deleted=m.get("deleted", False),
            )
            if not st.deleted:
                st.records = [
                    DataRecord.from_dict(d) for d in self._record_file(store_id).read_all()
                ]
            st.audit = [AuditRecord.from_dict(d) for d in self._audit_file(store_id).read_all()]
            self._stores[store_id] = st
            if m.get("driver"):
                self._drivers[source.source_id] = m["driver"]

    def _save_meta(self, st: _Store):
        self._meta_path(st.store_id).write_text(
            canonical_json(
                {
                    "store_id": st.store_id,
                    "source": {
                        "source_id": st.source.source_id,
                        "kind": st.source.kind,
                        "owner_ids": sorted(st.source.owner_ids),
                        "label": st.source.label,
                        "schema_id": st.source.schema_id,
                    },
                    "schema": st.schema.to_dict(),
                    "deleted": st.deleted,
                    "driver": self._drivers.get(st.source.source_id),
                }
            )
        )

    # -- internals -----------------------------------------------------

    def _get(self, store_id: str, allow_deleted=False) -> _Store:
        st = self._stores.get(store_id)
        if st is None or (st.deleted and not allow_deleted):
            raise NotFoundError(f"unknown store {store_id!r}")
        return st

    def _audit(self, st: _Store, actor, action, detail) -> AuditRecord:
        rec = AuditRecord(
            audit_seq=len(st.audit) + 1,
            time=self.clock.now_ms(),
            actor=actor,
            action=action,
            store_id=st.store_id,
            detail=detail,
        )
        self._audit_file(st.store_id).append(rec.to_dict(), rec.audit_seq - 1)
        st.audit.append(rec)
        return rec

    def _check_token(self, st: _Store, token_wire: str, action: str):
        """Arbiter round trip; emits a token-denied audit record on refusal."""
        if self.verifier is None:
            raise DataboxError("no arbiter wired to store engine")
        decision = self.verifier(token_wire, st.store_id, action, self.clock.now_ms())
        if not decision.allowed:
            self._audit(
                st,
                ("app", decision.app_id or "?"),
                "token-denied",
                {"reason": decision.reason, "action": action, "token_fp": decision.token_fp},
            )
            raise TokenDeniedError(decision.reason)
        return decision

    # -- operations ----------------------------------------------------

    def create_store(self, source: DataSource, schema: RecordSchema) -> str:
        for st in self._stores.values():
            if st.source.source_id == source.source_id:
                raise DuplicateError(f"source {source.source_id!r} already registered")
        store_id = f"store-{source.source_id}"
        if store_id in self._stores:
            raise DuplicateError(f"store {store_id!r} already exists")
        self._keyring[store_id] = self._key_source(store_id).hex()
        self._save_keyring()
        st = _Store(store_id=store_id, source=source, schema=schema)
        self._stores[store_id] = st
        self._save_meta(st)
        return store_id

    def register_driver(self, source_id: str, driver_id: str) -> None:
        existing = self._drivers.get(source_id)
        if existing is not None and existing != driver_id:
            raise DuplicateError(f"source {source_id!r} already has driver {existing!r}")
        self._drivers[source_id] = driver_id
        st = self.store_for_source(source_id)
        self._save_meta(self._get(st))

    def store_for_source(self, source_id: str) -> str:
        for st in self._stores.values():
            if st.source.source_id == source_id and not st.deleted:
                return st.store_id
        raise NotFoundError(f"no store for source {source_id!r}")

    def append(self, store_id: str, timestamp: int, values, actor=None) -> int:
        st = self._get(store_id)
        st.schema.check(values)
        with st.lock:
            rec = DataRecord(
                seq_no=len(st.records) + 1, timestamp=timestamp, values=tuple(values)
            )
            self._record_file(store_id).append(rec.to_dict(), len(st.records))
            st.records.append(rec)
            self._audit(
                st,
                actor or ("driver", st.source.source_id),
                "append",
                {"seq_no": rec.seq_no, "t": timestamp},
            )
            return rec.seq_no

    def query(self, store_id: str, token_wire: str, spec: QuerySpec):
        st = self._get(store_id)
        decision = self._check_token(st, token_wire, "query")
        with st.lock:
            snapshot = list(st.records)
        rows = [r for r in snapshot if spec.t_start <= r.timestamp < spec.t_end]
        if spec.max_rows is not None:
            rows = rows[: spec.max_rows]
        result = self._aggregate(rows, spec.aggregation)
        with st.lock:
            self._audit(
                st,
                ("app", decision.app_id),
                "query",
                {
                    "range": [spec.t_start, spec.t_end],
                    "rows": len(rows),
                    "aggregation": spec.aggregation,
                    "policy_id": decision.policy_id,
                    "token_fp": decision.token_fp,
                },
            )
        return result

    @staticmethod
    def _aggregate(rows: list[DataRecord], aggregation: str):
        if aggregation == "none":
            return [r.to_dict() for r in rows]
        live = [r for r in rows if not r.redacted]
        if aggregation == "count":
            return {"count": len(live)}
        if aggregation == "mean":
            if not live:
                return {"mean": None}
            # Mean over the first numeric field.
            vals = [r.values[0] for r in live]
            return {"mean": sum(vals) / len(vals)}
        raise DataboxError(f"unknown aggregation {aggregation!r}")

    def actuate(self, store_id: str, token_wire: str, command: dict):
        st = self._get(store_id)
        if st.source.kind not in ACTUATABLE_KINDS:
            raise DataboxError(
                f"source kind {st.source.kind!r} does not support actuation",
                code="UNSUPPORTED-ACTUATION",
            )
        decision = self._check_token(st, token_wire, "actuate")
        with st.lock:
            rec = DataRecord(
                seq_no=len(st.records) + 1,
                timestamp=self.clock.now_ms(),
                values=(canonical_json(command),)
                if st.schema.fields and st.schema.fields[0][1] == "text"
                else (),
            )
            if rec.values:
                self._record_file(store_id).append(rec.to_dict(), len(st.records))
                st.records.append(rec)
            self._audit(
                st,
                ("app", decision.app_id),
                "actuate",
                {"command": command, "token_fp": decision.token_fp,
                 "policy_id": decision.policy_id},
            )
        return {"ok": True}

    def record_export(self, store_id: str, app_id: str, detail: dict) -> AuditRecord:
        """One export audit record per dispatched frame (boundary accounting)."""
        st = self._get(store_id)
        with st.lock:
            return self._audit(st, ("app", app_id), "export", detail)

    def manage_store(self, store_id: str, op: str, requesting_user: str, t_range=None):
        st = self._get(store_id)
        if requesting_user not in st.source.owner_ids:
            raise AuthorizationError(f"{requesting_user!r} does not own {store_id!r}")
        with st.lock:
            if op == "redact":
                if t_range is None:
                    raise DataboxError("redact requires a time range")
                t0, t1 = t_range
                new = []
                hit = 0
                for r in st.records:
                    if not r.redacted and t0 <= r.timestamp < t1:
                        r = DataRecord(r.seq_no, r.timestamp, (), redacted=True)
                        hit += 1
                    new.append(r)
                st.records = new
                self._record_file(store_id).rewrite([r.to_dict() for r in new])
                self._audit(st, ("user", requesting_user), "redact",
                            {"range": [t0, t1], "rows": hit})
                return {"status": "ok", "redacted": hit}
            if op == "clear":
                n = len(st.records)
                st.records = []
                self._record_file(store_id).rewrite([])
                self._audit(st, ("user", requesting_user), "clear", {"rows": n})
                return {"status": "ok", "cleared": n}
            if op == "delete":
                if st.pending_delete_approvals is None:
                    st.pending_delete_approvals = set()
                st.pending_delete_approvals.add(requesting_user)
                if st.pending_delete_approvals >= st.source.owner_ids:
                    return self._finish_delete(st, requesting_user)
                self._audit(st, ("user", requesting_user), "delete",
                            {"status": "pending-consent",
                             "approved_by": sorted(st.pending_delete_approvals)})
                if self.on_pending_delete:
                    remaining = st.source.owner_ids - st.pending_delete_approvals
                    self.on_pending_delete(store_id, requesting_user, sorted(remaining))
                return {"status": "pending-consent",
                        "awaiting": sorted(st.source.owner_ids - st.pending_delete_approvals)}
            raise DataboxError(f"unknown manage op {op!r}")

    def _finish_delete(self, st: _Store, requesting_user: str):
        self._audit(st, ("user", requesting_user), "delete", {"status": "removed"})
        st.deleted = True
        st.records = []
        box = self.data_dir / f"{st.store_id}.box"
        if box.exists():
            box.unlink()
        self._save_meta(st)
        return {"status": "removed"}

    def approve_delete(self, store_id: str, user: str):
        st = self._get(store_id)
        if st.pending_delete_approvals is None:
            raise DataboxError("no pending delete for this store", code="NO-PENDING-DELETE")
        return self.manage_store(store_id, "delete", user)

    def read_audit(self, store_id: str, caller: str, t_range=None) -> list[AuditRecord]:
        st = self._get(store_id, allow_deleted=True)
        if caller != "system" and caller not in st.source.owner_ids:
            raise AuthorizationError(f"{caller!r} may not read audit of {store_id!r}")
        recs = st.audit
        if t_range is not None:
            t0, t1 = t_range
            recs = [r for r in recs if t0 <= r.time < t1]
        return list(recs)

    # -- introspection -------------------------------------------------

    def list_stores(self):
        return [
            {
                "store_id": st.store_id,
                "source_id": st.source.source_id,
                "kind": st.source.kind,
                "label": st.source.label,
                "owner_ids": sorted(st.source.owner_ids),
                "records": len(st.records),
                "pending_delete": sorted(st.pending_delete_approvals)
                if st.pending_delete_approvals
                else None,
            }
            for st in self._stores.values()
            if not st.deleted
        ]

    def store_meta(self, store_id: str):
        st = self._get(store_id)
        return {
            "store_id": st.store_id,
            "kind": st.source.kind,
            "owner_ids": set(st.source.owner_ids),
            "schema": st.schema,
            "label": st.source.label,
        }

    def store_keys(self):
        """Test hook: per-store encryption keys (honeycomb property checks)."""
        return dict(self._keyring)

    def decrypt_store_file(self, store_id: str, key: bytes):
        """Test hook: attempt decryption of a store file with an explicit key.

        Raises ``InvalidTag`` when the key does not match the file's own.
        """
        ff = _FrameFile(self.data_dir / f"{store_id}.box", key)
        return ff.read_all()


DecryptionError = InvalidTag
