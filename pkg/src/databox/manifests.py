"""Manifests, SLAs, and policy compilation.

A manifest is a three-layer notice carried as a YAML document with ``short``,
``condensed`` and ``legal`` top-level sections. Once the user resolves the
granular choices it offers, it becomes an approved SLA, which compiles to the
policy set the arbiter enforces. Hashing and receipts use a canonical JSON
serialization of the parsed tree so identical installs are byte-identical.
"""

from __future__ import annotations

import hashlib
import hmac
import json
from dataclasses import dataclass, field

import yaml

from .arbiter import Policy
from .errors import DataboxError, NotFoundError, ValidationError

DEFAULT_POLICY_LIFETIME_MS = 30 * 24 * 3600 * 1000

# Condensed-layer fields required for a valid manifest. ``recipients`` and
# ``recipient_countries`` are additionally required to be non-empty lists for
# off-box apps.
ART13_TEXT_FIELDS = (
    "controller",
    "purposes",
    "legal_basis",
    "retention",
    "rights",
    "withdrawal",
)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def manifest_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def load_manifest(text: str) -> dict:
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ValidationError(["NOT-A-DOCUMENT"])
    return doc


def validate_manifest(doc: dict) -> list[str]:
    """Return the full list of violation codes; empty means valid."""
    errors: list[str] = []
    if not doc.get("app_id"):
        errors.append("APP-ID-MISSING")
    for layer in ("short", "condensed", "legal"):
        if not isinstance(doc.get(layer), dict) or not doc.get(layer):
            errors.append(f"LAYER-MISSING:{layer}")
    short = doc.get("short") if isinstance(doc.get("short"), dict) else {}
    condensed = doc.get("condensed") if isinstance(doc.get("condensed"), dict) else {}
    legal = doc.get("legal") if isinstance(doc.get("legal"), dict) else {}

    if "short" not in [e.split(":")[1] for e in errors if e.startswith("LAYER-MISSING")]:
        if not short.get("purpose"):
            errors.append("PURPOSE-MISSING")
        sources = short.get("sources") or []
        if not sources:
            errors.append("SOURCES-MISSING")
        for i, src in enumerate(sources):
            if not src.get("kind"):
                errors.append(f"SOURCE-KIND-MISSING:{i}")
            if not src.get("actions"):
                errors.append(f"SOURCE-ACTIONS-MISSING:{i}")
            if not src.get("sample_periods_ms"):
                errors.append(f"SOURCE-PERIODS-MISSING:{i}")
        if short.get("off_box"):
            if not short.get("report_periods_ms"):
                errors.append("REPORT-PERIODS-MISSING")
    if legal is not None and "LAYER-MISSING:legal" not in errors:
        if not legal.get("terms"):
            errors.append("LEGAL-TERMS-MISSING")
    if "LAYER-MISSING:condensed" not in errors:
        for f in ART13_TEXT_FIELDS:
            if not condensed.get(f):
                errors.append(f"ART13-{f.upper().replace('_', '-')}-MISSING")
        if condensed.get("legal_basis") not in (None, "consent"):
            errors.append("LEGAL-BASIS-NOT-CONSENT")
        if short.get("off_box"):
            if not condensed.get("recipients"):
                errors.append("ART13-RECIPIENTS-MISSING")
            if not condensed.get("recipient_countries"):
                errors.append("ART13-RECIPIENT-COUNTRIES-MISSING")
    return errors


@dataclass(frozen=True)
class Grant:
    source_kind: str
    store_id: str
    actions: frozenset[str]
    sample_period_ms: int

    def to_dict(self):
        return {
            "source_kind": self.source_kind,
            "store_id": self.store_id,
            "actions": sorted(self.actions),
            "sample_period_ms": self.sample_period_ms,
        }


@dataclass
class Sla:
    sla_id: str
    app_id: str
    user_id: str
    manifest_hash: str
    grants: tuple[Grant, ...]
    off_box: bool
    report_period_ms: int | None
    preview_required: bool
    approved_at: int
    withdrawn_at: int | None = None

    def to_dict(self):
        return {
            "sla_id": self.sla_id,
            "app_id": self.app_id,
            "user_id": self.user_id,
            "manifest_hash": self.manifest_hash,
            "grants": [g.to_dict() for g in self.grants],
            "off_box": self.off_box,
            "report_period_ms": self.report_period_ms,
            "preview_required": self.preview_required,
            "approved_at": self.approved_at,
            "withdrawn_at": self.withdrawn_at,
        }

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.to_dict()).encode()

    def grant_for_kind(self, kind: str) -> Grant | None:
        for g in self.grants:
            if g.source_kind == kind:
                return g
        return None

    @classmethod
    def from_dict(cls, d):
        return cls(
            sla_id=d["sla_id"],
            app_id=d["app_id"],
            user_id=d["user_id"],
            manifest_hash=d["manifest_hash"],
            grants=tuple(
                Grant(
                    source_kind=g["source_kind"],
                    store_id=g["store_id"],
                    actions=frozenset(g["actions"]),
                    sample_period_ms=g["sample_period_ms"],
                )
                for g in d["grants"]
            ),
            off_box=d["off_box"],
            report_period_ms=d.get("report_period_ms"),
            preview_required=d["preview_required"],
            approved_at=d["approved_at"],
            withdrawn_at=d.get("withdrawn_at"),
        )


def export_store_id(app_id: str) -> str:
    """Pseudo store id for the export-capable output path of an app."""
    return f"export:{app_id}"


class ManifestEngine:
    """Validates manifests, resolves user choices into SLAs, compiles policies.

    ``on_withdraw(sla)`` is wired by the platform to stop the app and notify.
    """

    def __init__(self, clock, receipt_secret: bytes):
        self.clock = clock
        self._receipt_secret = receipt_secret
        self.slas: dict[str, Sla] = {}
        self.on_withdraw = None

    def resolve_choices(self, doc: dict, user_id: str, choices: dict) -> Sla:
        """Turn a user's choice vector over a valid manifest into an approved SLA.

        Choice vector shape::

            {"sources": {kind: {"selected": bool, "store_id": ...,
                                 "sample_period_ms": ...}},
             "report_period_ms": ..., "preview": bool}
        """
        errors = validate_manifest(doc)
        if errors:
            raise ValidationError(errors)
        short = doc["short"]
        chosen = choices.get("sources", {})
        grants = []
        for src in short["sources"]:
            kind = src["kind"]
            pick = chosen.get(kind)
            selected = bool(pick and pick.get("selected", True))
            if not selected:
                if not src.get("optional", False):
                    raise ValidationError([f"MANDATORY-SOURCE-DESELECTED:{kind}"])
                continue
            period = pick.get("sample_period_ms")
            if period not in src["sample_periods_ms"]:
                raise ValidationError([f"SAMPLE-PERIOD-NOT-OFFERED:{kind}:{period}"])
            store_id = pick.get("store_id")
            if not store_id:
                raise ValidationError([f"STORE-NOT-CHOSEN:{kind}"])
            grants.append(
                Grant(
                    source_kind=kind,
                    store_id=store_id,
                    actions=frozenset(src["actions"]),
                    sample_period_ms=period,
                )
            )
        off_box = bool(short.get("off_box"))
        report_period = None
        if off_box:
            report_period = choices.get("report_period_ms")
            if report_period not in short["report_periods_ms"]:
                raise ValidationError([f"REPORT-PERIOD-NOT-OFFERED:{report_period}"])
        preview = bool(choices.get("preview", off_box))
        mhash = manifest_hash(doc)
        sla_id = "sla-" + hashlib.sha256(
            canonical_json(
                {
                    "app_id": doc["app_id"],
                    "user_id": user_id,
                    "manifest_hash": mhash,
                    "grants": [g.to_dict() for g in grants],
                    "report_period_ms": report_period,
                    "preview": preview,
                }
            ).encode()
        ).hexdigest()[:12]
        sla = Sla(
            sla_id=sla_id,
            app_id=doc["app_id"],
            user_id=user_id,
            manifest_hash=mhash,
            grants=tuple(grants),
            off_box=off_box,
            report_period_ms=report_period,
            preview_required=preview,
            approved_at=self.clock.now_ms(),
        )
        self.slas[sla_id] = sla
        return sla

    def compile(self, sla: Sla) -> list[Policy]:
        """One policy per grant, plus the export-stage policy for off-box SLAs.

        Deterministic and total on valid SLAs; refuses withdrawn ones.
        """
        if sla.withdrawn_at is not None:
            raise DataboxError("SLA withdrawn", code="SLA-WITHDRAWN")
        expiry = sla.approved_at + DEFAULT_POLICY_LIFETIME_MS
        policies = []
        for g in sla.grants:
            policies.append(
                Policy(
                    policy_id=f"pol-{sla.sla_id}-{g.store_id}",
                    sla_id=sla.sla_id,
                    app_id=sla.app_id,
                    store_id=g.store_id,
                    actions=frozenset(g.actions),
                    max_sample_period_ms=g.sample_period_ms,
                    max_report_period_ms=sla.report_period_ms if sla.off_box else None,
                    expiry=expiry,
                )
            )
        if sla.off_box:
            policies.append(
                Policy(
                    policy_id=f"pol-{sla.sla_id}-export",
                    sla_id=sla.sla_id,
                    app_id=sla.app_id,
                    store_id=export_store_id(sla.app_id),
                    actions=frozenset({"export-stage"}),
                    max_sample_period_ms=sla.report_period_ms,
                    max_report_period_ms=sla.report_period_ms,
                    expiry=expiry,
                )
            )
        return policies

    def withdraw(self, sla_id: str) -> dict:
        sla = self.slas.get(sla_id)
        if sla is None or sla.withdrawn_at is not None:
            return {"status": "withdrawn", "sla_id": sla_id}  # idempotent
        sla.withdrawn_at = max(self.clock.now_ms(), sla.approved_at)
        if self.on_withdraw:
            self.on_withdraw(sla)
        return {"status": "withdrawn", "sla_id": sla_id}

    def receipt(self, sla_id: str) -> dict:
        """Signed receipt document the user can download."""
        sla = self.slas.get(sla_id)
        if sla is None:
            raise NotFoundError(f"unknown SLA {sla_id!r}")
        body = sla.canonical_bytes()
        sig = hmac.new(self._receipt_secret, body, hashlib.sha256).hexdigest()
        return {"sla": sla.to_dict(), "signature": sig}

    # -- state snapshot ------------------------------------------------

    def to_dict(self):
        return {"slas": [s.to_dict() for s in self.slas.values()]}

    def load_dict(self, d):
        self.slas = {s["sla_id"]: Sla.from_dict(s) for s in d.get("slas", [])}
