"""Node and app risk rating plus accreditation.

Each node kind carries a predefined spectrum; configuration fires reason
codes that raise factor levels within it. App ratings aggregate per factor by
max over nodes (ordinal levels, clean monotonicity; the aggregation strategy
is isolated in ``_aggregate`` and swappable). The attribution table mapping
reason codes to legal/technical/social lives in a versioned data file so
ratings stay auditable without code changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .flows import FlowApp, FlowNode

LEVELS = ("none", "low", "medium", "high")
FACTORS = ("legal", "technical", "social")


def _load_table() -> dict:
    with resources.files("databox.data").joinpath("risk_spectra.json").open() as fh:
        return json.load(fh)


@dataclass(frozen=True)
class NodeRating:
    node_id: str
    level: int
    factor_levels: dict[str, int]
    reasons: tuple[str, ...]


@dataclass
class RiskRating:
    overall: int
    factors: dict[str, dict]  # factor -> {"level": int, "reasons": [codes]}
    accredited: bool
    reasons: list[dict] = field(default_factory=list)
    node_ratings: list[NodeRating] = field(default_factory=list)

    @property
    def shields(self) -> int:
        """At-a-glance display: one shield per risk level (0-3)."""
        return self.overall

    def to_dict(self):
        return {
            "overall": self.overall,
            "overall_label": LEVELS[self.overall],
            "shields": self.shields,
            "factors": {
                f: {"level": v["level"], "label": LEVELS[v["level"]],
                    "reasons": sorted(set(v["reasons"]))}
                for f, v in self.factors.items()
            },
            "accredited": self.accredited,
            "reasons": self.reasons,
        }


class RiskEngine:
    def __init__(self, table: dict | None = None):
        self.table = table or _load_table()

    def _spectrum(self, node: FlowNode):
        key = f"output:{node.output}" if node.kind == "output" else node.kind
        return self.table["spectra"].get(key)

    def node_risk(self, node: FlowNode, config: dict, context: dict) -> NodeRating:
        """Rate one node; deterministic in (node, config, context).

        Context keys: off_box, outside_eu, online_access, verified_functions.
        """
        spectrum = self._spectrum(node)
        fired: list[str] = []
        if spectrum is None:
            fired.append("UNVERIFIED-NODE")
            spectrum = {"min": 3, "max": 3}
        else:
            if node.kind == "source" and node.source_kind in self.table[
                "sensitive_source_kinds"
            ]:
                fired.append("SENSITIVE-SOURCE")
            if node.kind == "process" and node.function not in context.get(
                "verified_functions", ()
            ):
                fired.append("UNVERIFIED-NODE")
            if node.kind == "output" and node.output == "export":
                fired.append("OFF-BOX")
                if context.get("outside_eu"):
                    fired.append("NON-EU-RECIPIENT")
                if not context.get("online_access"):
                    fired.append("NO-ACCESS-API")
            if node.kind == "output" and node.output == "actuation":
                fired.append("ACTUATION")
                essential = config.get("essential") or config.get(
                    "target_kind"
                ) in self.table["essential_target_kinds"]
                if essential:
                    fired.append("ESSENTIAL-ACTUATION")
            if node.kind == "output" and node.output == "derived-store":
                fired.append("DERIVED-RETENTION")
        factor_levels = {f: 0 for f in FACTORS}
        for code in fired:
            meta = self.table["reasons"][code]
            factor_levels[meta["factor"]] = min(
                factor_levels[meta["factor"]] + meta["delta"], spectrum["max"], 3
            )
        level = max([spectrum["min"]] + list(factor_levels.values()))
        level = max(spectrum["min"], min(level, spectrum["max"]))
        return NodeRating(
            node_id=node.node_id,
            level=level,
            factor_levels=factor_levels,
            reasons=tuple(fired),
        )

    @staticmethod
    def _aggregate(values: list[int]) -> int:
        return max(values) if values else 0

    def _context(self, manifest_doc: dict) -> dict:
        from .processes import REGISTRY

        short = manifest_doc.get("short", {}) or {}
        condensed = manifest_doc.get("condensed", {}) or {}
        return {
            "off_box": bool(short.get("off_box")),
            "outside_eu": bool(condensed.get("outside_eu")),
            "online_access": bool(short.get("online_access_url")),
            "verified_functions": frozenset(REGISTRY),
        }

    def app_risk(self, flow: FlowApp, manifest_doc: dict) -> RiskRating:
        context = self._context(manifest_doc)
        node_ratings = [
            self.node_risk(n, n.config, context) for n in flow.nodes.values()
        ]
        factors = {}
        for f in FACTORS:
            contributors = [nr for nr in node_ratings if nr.factor_levels[f] > 0]
            factors[f] = {
                "level": self._aggregate([nr.factor_levels[f] for nr in node_ratings]),
                "reasons": [
                    code
                    for nr in contributors
                    for code in nr.reasons
                    if self.table["reasons"].get(code, {}).get("factor") == f
                ],
            }
        overall = self._aggregate([v["level"] for v in factors.values()])
        reasons = [
            {"code": code, "node_id": nr.node_id,
             "text": self.table["reasons"].get(code, {}).get("text", code)}
            for nr in node_ratings
            for code in nr.reasons
        ]
        return RiskRating(
            overall=overall,
            factors=factors,
            accredited=self.accredit(flow, manifest_doc),
            reasons=reasons,
            node_ratings=node_ratings,
        )

    def accredit(self, flow: FlowApp, manifest_doc: dict) -> bool:
        """True iff the app provably takes nothing off the box."""
        context = self._context(manifest_doc)
        if flow.export_nodes():
            return False
        if manifest_doc.get("short", {}).get("off_box"):
            return False
        for node in flow.nodes.values():
            nr = self.node_risk(node, node.config, context)
            if "UNVERIFIED-NODE" in nr.reasons:
                return False
        return True

    def rate_unverified(self, rating: RiskRating) -> RiskRating:
        """Force an externally-built package to the high rating bracket."""
        meta = self.table["reasons"]["UNVERIFIED-APP"]
        rating.factors[meta["factor"]]["level"] = 3
        rating.factors[meta["factor"]]["reasons"].append("UNVERIFIED-APP")
        rating.overall = 3
        rating.accredited = False
        rating.reasons.append(
            {"code": "UNVERIFIED-APP", "node_id": None, "text": meta["text"]}
        )
        return rating
