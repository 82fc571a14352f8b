"""Local app registry: packages, risk reports, stars, accreditation badges.

A package is the flow document plus manifest (plus optional assets),
content-addressed by the hash of its canonical serialization. The store is a
local service; multiple store instances are just different client URLs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import DataboxError, DuplicateError, NotFoundError, ValidationError
from .flows import canonical_json, parse_flow
from .manifests import validate_manifest
from .risk import RiskEngine


def package_hash(package: dict) -> str:
    return hashlib.sha256(canonical_json(package).encode()).hexdigest()


@dataclass
class Listing:
    app_id: str
    package: dict  # {"flow": doc, "manifest": doc, "verified": bool, ...}
    package_hash: str
    risk_report: dict
    accredited: bool
    verified: bool
    publish_time: int
    stars_total: int = 0
    stars_count: int = 0
    ratings: dict[str, int] = field(default_factory=dict)  # user -> stars

    @property
    def stars_mean(self) -> float | None:
        return self.stars_total / self.stars_count if self.stars_count else None

    def mandatory_kinds(self) -> set[str]:
        return {
            s["kind"]
            for s in self.package["manifest"]["short"]["sources"]
            if not s.get("optional", False)
        }

    def to_dict(self):
        return {
            "app_id": self.app_id,
            "package_hash": self.package_hash,
            "risk": self.risk_report,
            "accredited": self.accredited,
            "verified": self.verified,
            "stars": {"mean": self.stars_mean, "count": self.stars_count},
            "publish_time": self.publish_time,
            "manifest": self.package["manifest"],
        }


class AppStore:
    def __init__(self, risk_engine: RiskEngine, clock):
        self.risk = risk_engine
        self.clock = clock
        self.listings: dict[str, Listing] = {}
        self.installed_by: dict[str, set[str]] = {}  # app_id -> users

    def publish(self, package: dict) -> Listing:
        manifest = package.get("manifest")
        if not manifest:
            raise ValidationError(["MANIFEST-MISSING"])
        errors = validate_manifest(manifest)
        if errors:
            raise ValidationError(errors)
        flow = parse_flow(package["flow"])
        if flow.app_id != manifest.get("app_id"):
            raise ValidationError(["FLOW-MANIFEST-APP-MISMATCH"])
        phash = package_hash(package)
        for listing in self.listings.values():
            if listing.package_hash == phash:
                raise DuplicateError(f"package {phash[:12]} already published")
        verified = bool(package.get("verified", False))
        rating = self.risk.app_risk(flow, manifest)
        if not verified:
            rating = self.risk.rate_unverified(rating)
        listing = Listing(
            app_id=flow.app_id,
            package=package,
            package_hash=phash,
            risk_report=rating.to_dict(),
            accredited=rating.accredited,
            verified=verified,
            publish_time=self.clock.now_ms(),
        )
        self.listings[flow.app_id] = listing
        return listing

    def get(self, app_id: str) -> Listing:
        listing = self.listings.get(app_id)
        if listing is None:
            raise NotFoundError(f"no listing for {app_id!r}")
        # Manifest gate: every retrievable listing re-validates at read time.
        errors = validate_manifest(listing.package["manifest"])
        if errors:
            raise ValidationError(["LISTING-MANIFEST-STALE"] + errors)
        return listing

    @staticmethod
    def _sort_key(listing: Listing):
        # Accredited first, ascending risk, stars descending, oldest first.
        return (
            0 if listing.accredited else 1,
            listing.risk_report["overall"],
            -(listing.stars_mean or 0.0),
            listing.publish_time,
            listing.app_id,
        )

    def search(self, source_kinds=None, max_risk=None, accredited_only=False):
        out = []
        for listing in self.listings.values():
            if accredited_only and not listing.accredited:
                continue
            if max_risk is not None and listing.risk_report["overall"] > max_risk:
                continue
            if source_kinds is not None and not listing.mandatory_kinds() <= set(
                source_kinds
            ):
                continue
            out.append(listing)
        return sorted(out, key=self._sort_key)

    def recommend(self, available_kinds) -> list[Listing]:
        """Apps whose mandatory sources are all available on this box."""
        return self.search(source_kinds=set(available_kinds))

    def mark_installed(self, app_id: str, user: str):
        self.installed_by.setdefault(app_id, set()).add(user)

    def rate(self, app_id: str, user: str, stars: int) -> dict:
        listing = self.get(app_id)
        if not isinstance(stars, int) or not 1 <= stars <= 5:
            raise DataboxError("stars must be an integer 1-5", code="BAD-STARS")
        if user not in self.installed_by.get(app_id, set()):
            raise DataboxError("only installers may rate an app", code="NOT-INSTALLER")
        listing.ratings[user] = stars  # latest wins, one rating per user
        listing.stars_count = len(listing.ratings)
        listing.stars_total = sum(listing.ratings.values())
        return {"mean": listing.stars_mean, "count": listing.stars_count}

    def recheck_badges(self) -> list[str]:
        """Periodic re-check: recompute accreditation on the stored package."""
        changed = []
        for listing in self.listings.values():
            flow = parse_flow(listing.package["flow"])
            fresh = listing.verified and self.risk.accredit(
                flow, listing.package["manifest"]
            )
            if fresh != listing.accredited:
                listing.accredited = fresh
                changed.append(listing.app_id)
        return changed
