"""Flow-graph apps: DAG of source, process, and output nodes.

Flow documents are YAML/JSON trees::

    app_id: my-app
    nodes:
      - {id: energy, kind: source, source_kind: energy-meter}
      - {id: occ, kind: process, function: occupancy-estimator, params: {...}}
      - {id: viz, kind: output, output: visualisation}
      - {id: up, kind: output, output: export, recipient: acme-insurance}
    edges: [[energy, occ], [occ, viz], [occ, up]]

Canonical serialization of the parsed tree is hashed into the manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter

from .errors import ValidationError

NODE_KINDS = ("source", "process", "output")
OUTPUT_KINDS = ("visualisation", "actuation", "export", "derived-store")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def flow_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


@dataclass(frozen=True)
class FlowNode:
    node_id: str
    kind: str  # source | process | output
    source_kind: str | None = None
    function: str | None = None
    output: str | None = None
    config: dict = field(default_factory=dict)


@dataclass
class FlowApp:
    app_id: str
    nodes: dict[str, FlowNode]
    edges: list[tuple[str, str]]
    doc: dict

    @property
    def hash(self) -> str:
        return flow_hash(self.doc)

    def inputs_of(self, node_id: str) -> list[str]:
        return [a for a, b in self.edges if b == node_id]

    def outputs_of(self, node_id: str) -> list[str]:
        return [b for a, b in self.edges if a == node_id]

    def topo_order(self) -> list[str]:
        ts = TopologicalSorter({n: set(self.inputs_of(n)) for n in self.nodes})
        return list(ts.static_order())

    def nodes_of_kind(self, kind: str) -> list[FlowNode]:
        return [n for n in self.nodes.values() if n.kind == kind]

    def export_nodes(self) -> list[FlowNode]:
        return [n for n in self.nodes.values() if n.kind == "output" and n.output == "export"]


def parse_flow(doc: dict) -> FlowApp:
    """Parse and validate a flow document; raises with all violation codes."""
    errors: list[str] = []
    if not doc.get("app_id"):
        errors.append("FLOW-APP-ID-MISSING")
    nodes: dict[str, FlowNode] = {}
    for nd in doc.get("nodes") or []:
        nid = nd.get("id")
        if not nid:
            errors.append("NODE-ID-MISSING")
            continue
        if nid in nodes:
            errors.append(f"NODE-ID-DUPLICATE:{nid}")
            continue
        kind = nd.get("kind")
        if kind not in NODE_KINDS:
            errors.append(f"NODE-KIND-UNKNOWN:{nid}")
            continue
        if kind == "source" and not nd.get("source_kind"):
            errors.append(f"SOURCE-KIND-MISSING:{nid}")
        if kind == "process" and not nd.get("function"):
            errors.append(f"PROCESS-FUNCTION-MISSING:{nid}")
        if kind == "output" and nd.get("output") not in OUTPUT_KINDS:
            errors.append(f"OUTPUT-KIND-UNKNOWN:{nid}")
        nodes[nid] = FlowNode(
            node_id=nid,
            kind=kind,
            source_kind=nd.get("source_kind"),
            function=nd.get("function"),
            output=nd.get("output"),
            config=nd.get("params") or nd.get("config") or {},
        )
    edges: list[tuple[str, str]] = []
    for e in doc.get("edges") or []:
        a, b = e[0], e[1]
        if a not in nodes or b not in nodes:
            errors.append(f"EDGE-UNKNOWN-NODE:{a}->{b}")
            continue
        edges.append((a, b))
    if not nodes:
        errors.append("NO-NODES")
    app = FlowApp(app_id=doc.get("app_id", ""), nodes=nodes, edges=edges, doc=doc)
    if not errors:
        try:
            app.topo_order()
        except CycleError:
            errors.append("FLOW-CYCLE")
    for n in nodes.values():
        ins, outs = app.inputs_of(n.node_id), app.outputs_of(n.node_id)
        if n.kind == "source" and ins:
            errors.append(f"SOURCE-HAS-INPUTS:{n.node_id}")
        if n.kind == "process" and (not ins or not outs):
            errors.append(f"PROCESS-DANGLING:{n.node_id}")
        if n.kind == "output" and outs:
            errors.append(f"OUTPUT-HAS-OUTPUTS:{n.node_id}")
        if n.kind == "output" and not ins:
            errors.append(f"OUTPUT-NO-INPUTS:{n.node_id}")
    if errors:
        raise ValidationError(errors)
    return app
