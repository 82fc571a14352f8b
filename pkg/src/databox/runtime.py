"""App runtime: tick scheduler, flow execution, export gating, provenance.

One logical executor per app (a per-app lock); ticks never overlap. Exports
pass through a linearizable preview queue and every dispatched frame goes to
the communications log plus exactly one export audit record, so the platform
boundary is fully accounted.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataboxError, NotFoundError, TokenDeniedError, ValidationError
from .flows import FlowApp
from .manifests import Sla, export_store_id
from .processes import REGISTRY
from .stores import QuerySpec, RecordSchema


@dataclass
class ProvenanceEntry:
    node_id: str
    input_summary: str
    output_summary: str
    time: int

    def to_dict(self):
        return {
            "node_id": self.node_id,
            "input": self.input_summary,
            "output": self.output_summary,
            "time": self.time,
        }


@dataclass
class ProvenanceTrace:
    run_id: str
    app_id: str
    entries: list[ProvenanceEntry] = field(default_factory=list)

    def to_dict(self):
        return {
            "run_id": self.run_id,
            "app_id": self.app_id,
            "entries": [e.to_dict() for e in self.entries],
        }


@dataclass
class ExportItem:
    item_id: str
    app_id: str
    recipient: str
    payload: dict
    staged_at: int
    state: str = "staged"  # staged -> approved -> dispatched | denied
    audit_store_id: str | None = None
    decided_by: str | None = None


def summarize(value) -> str:
    """Compact human-readable summary of a node input/output for inspection."""
    if value is None:
        return "none"
    if isinstance(value, list):
        if value and isinstance(value[0], dict) and "t" in value[0]:
            return f"{len(value)} rows"
        if value and all(isinstance(v, (int, float)) for v in value):
            lo, hi = min(value), max(value)
            return f"matrix[{len(value)}] in [{lo:.2f}, {hi:.2f}]"
        return f"list[{len(value)}]"
    if isinstance(value, float):
        return f"{value:.4f}"
    if isinstance(value, dict):
        return "{" + ", ".join(sorted(value)) + "}"
    return str(value)


@dataclass
class _LoadedApp:
    app_id: str
    flow: FlowApp
    sla: Sla
    topo: list[str]
    node_state: dict[str, dict] = field(default_factory=dict)
    last_query_ms: dict[str, int] = field(default_factory=dict)
    last_export_event_ms: int | None = None
    runs: list[ProvenanceTrace] = field(default_factory=list)
    viz: dict[str, object] = field(default_factory=dict)
    derived_stores: dict[str, str] = field(default_factory=dict)
    suspended: bool = False
    terminated: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)


class Runtime:
    """Executes loaded flow apps against the arbiter-guarded store layer.

    Collaborators wired by the platform:
      - ``arbiter``: mints tokens and is consulted (via the store engine) on
        every read/actuation;
      - ``stores``: the store engine;
      - ``dispatch_sink(frame) -> receipt``: delivers an export frame to the
        recipient's processor stub;
      - ``notify(user_id, kind, payload)``: dashboard notifications;
      - ``event_log(kind, payload)``: platform event log (export denials,
        suspensions) kept outside store audit so boundary accounting stays 1:1.
    """

    def __init__(self, arbiter, stores, clock, comms_log_path,
                 dispatch_sink=None, notify=None, event_log=None):
        self.arbiter = arbiter
        self.stores = stores
        self.clock = clock
        self.comms_log_path = Path(comms_log_path)
        self.dispatch_sink = dispatch_sink or (lambda frame: {"receipt": None})
        self.notify = notify or (lambda user, kind, payload: None)
        self.event_log = event_log or (lambda kind, payload: None)
        self.apps: dict[str, _LoadedApp] = {}
        self.exports: dict[str, ExportItem] = {}
        self._export_lock = threading.Lock()
        self._export_count = 0
        self._frame_count = 0

    # -- loading -------------------------------------------------------

    def load_app(self, flow: FlowApp, sla: Sla, manifest_doc: dict) -> _LoadedApp:
        if sla.withdrawn_at is not None:
            raise DataboxError("SLA withdrawn", code="SLA-WITHDRAWN")
        if flow.app_id != sla.app_id:
            raise ValidationError(["FLOW-SLA-APP-MISMATCH"])
        errors = []
        short = manifest_doc.get("short", {})
        for node in flow.nodes_of_kind("source"):
            if sla.grant_for_kind(node.source_kind) is None:
                errors.append(f"SOURCE-WITHOUT-GRANT:{node.node_id}")
        for node in flow.export_nodes():
            if not sla.off_box or not short.get("off_box"):
                errors.append(f"EXPORT-WITHOUT-OFFBOX:{node.node_id}")
        for node in flow.nodes_of_kind("process"):
            if node.function not in REGISTRY:
                errors.append(f"UNKNOWN-PROCESS-FUNCTION:{node.node_id}")
        # Minimisation: exports must be fed by process nodes, and a raw
        # pass-through feeding them must be declared in the manifest.
        for node in flow.export_nodes():
            for src in flow.inputs_of(node.node_id):
                upstream = flow.nodes[src]
                if upstream.kind == "source":
                    errors.append(f"EXPORT-FED-BY-RAW-SOURCE:{node.node_id}")
                elif (
                    upstream.kind == "process"
                    and upstream.function == "passthrough"
                    and not short.get("raw_passthrough")
                ):
                    errors.append(f"UNDECLARED-PASSTHROUGH:{node.node_id}")
        for node in flow.nodes_of_kind("output"):
            if node.output == "actuation":
                kind = node.config.get("target_kind")
                if kind is None or sla.grant_for_kind(kind) is None:
                    errors.append(f"ACTUATION-WITHOUT-GRANT:{node.node_id}")
                elif "actuate" not in sla.grant_for_kind(kind).actions:
                    errors.append(f"ACTUATION-NOT-GRANTED:{node.node_id}")
        if errors:
            raise ValidationError(errors)
        app = _LoadedApp(app_id=flow.app_id, flow=flow, sla=sla, topo=flow.topo_order())
        for node in flow.nodes_of_kind("output"):
            if node.output == "derived-store":
                app.derived_stores[node.node_id] = self._ensure_derived_store(
                    flow.app_id, node, sla.user_id
                )
        self.apps[flow.app_id] = app
        return app

    def _ensure_derived_store(self, app_id: str, node, owner: str) -> str:
        # Derived stores are owned by the installing user.
        from .stores import DataSource

        source_id = f"{app_id}-{node.node_id}"
        try:
            return self.stores.store_for_source(source_id)
        except NotFoundError:
            pass
        label = node.config.get("label", f"derived data from {app_id}")
        schema = RecordSchema(fields=(("value", "text", ""),))
        return self.stores.create_store(
            DataSource(source_id=source_id, kind="generic", owner_ids={owner}, label=label),
            schema,
        )

    # -- execution -----------------------------------------------------

    def tick(self, app_id: str, now: int | None = None) -> dict:
        app = self.apps.get(app_id)
        if app is None:
            raise NotFoundError(f"app {app_id!r} not loaded")
        now = self.clock.now_ms() if now is None else now
        with app.lock:
            return self._tick_locked(app, now)

    def tick_all(self, now: int | None = None) -> dict:
        return {app_id: self.tick(app_id, now) for app_id in list(self.apps)}

    def _tick_locked(self, app: _LoadedApp, now: int) -> dict:
        actions = {"queries": 0, "denials": 0, "outputs": 0, "staged": 0,
                   "dispatched": 0, "deferred": 0, "run_id": None,
                   "suspended": app.suspended}
        if app.terminated or app.suspended:
            return actions
        values: dict[str, object] = {}
        executed: set[str] = set()
        due = 0
        for node in app.flow.nodes_of_kind("source"):
            grant = app.sla.grant_for_kind(node.source_kind)
            last = app.last_query_ms.get(node.node_id)
            if last is not None and now - last < grant.sample_period_ms:
                continue
            due += 1
            try:
                token = self.arbiter.mint_token(app.app_id, grant.store_id)
                spec = QuerySpec(t_start=(last if last is not None else 0), t_end=now + 1)
                rows = self.stores.query(grant.store_id, token, spec)
            except (TokenDeniedError, NotFoundError):
                actions["denials"] += 1
                continue
            app.last_query_ms[node.node_id] = now
            values[node.node_id] = rows
            executed.add(node.node_id)
            actions["queries"] += 1
        if due and actions["queries"] == 0:
            # Every due source denied: the app suspends (degraded ticks keep
            # running while at least one source still answers).
            if actions["denials"] == due and due == len(app.flow.nodes_of_kind("source")):
                app.suspended = True
                actions["suspended"] = True
                self.notify(app.sla.user_id, "app-suspended", {"app_id": app.app_id})
                self.event_log("app-suspended", {"app_id": app.app_id, "time": now})
            return actions
        if not executed:
            return actions
        trace = ProvenanceTrace(run_id=f"{app.app_id}-run-{len(app.runs) + 1}",
                                app_id=app.app_id)
        implicated_stores = sorted(
            app.sla.grant_for_kind(app.flow.nodes[n].source_kind).store_id for n in executed
        )
        for node_id in app.topo:
            node = app.flow.nodes[node_id]
            if node.kind == "source":
                if node_id in executed:
                    trace.entries.append(ProvenanceEntry(
                        node_id, "store query", summarize(values[node_id]), now))
                continue
            in_ids = [i for i in app.flow.inputs_of(node_id) if i in executed]
            if not in_ids:
                continue
            inputs = [values[i] for i in in_ids]
            if node.kind == "process":
                state = app.node_state.setdefault(node_id, {})
                out = REGISTRY[node.function](inputs, state, node.config, now)
                values[node_id] = out
                executed.add(node_id)
                trace.entries.append(ProvenanceEntry(
                    node_id, "; ".join(summarize(v) for v in inputs), summarize(out), now))
            else:  # output
                result = self._run_output(app, node, inputs, implicated_stores, now, actions)
                executed.add(node_id)
                trace.entries.append(ProvenanceEntry(
                    node_id, "; ".join(summarize(v) for v in inputs), result, now))
                actions["outputs"] += 1
        app.runs.append(trace)
        actions["run_id"] = trace.run_id
        return actions

    def _run_output(self, app, node, inputs, implicated_stores, now, actions) -> str:
        value = inputs[0] if len(inputs) == 1 else inputs
        if node.output == "visualisation":
            app.viz[node.node_id] = value
            return "visualisation updated"
        if node.output == "derived-store":
            store_id = app.derived_stores[node.node_id]
            self.stores.append(store_id, now, (json.dumps(value, sort_keys=True),),
                               actor=("app", app.app_id))
            return f"appended to {store_id}"
        if node.output == "actuation":
            grant = app.sla.grant_for_kind(node.config["target_kind"])
            command = {"set": node.config.get("command", "on"), "value": summarize(value)}
            try:
                token = self.arbiter.mint_token(app.app_id, grant.store_id)
                self.stores.actuate(grant.store_id, token, command)
                return f"actuated {grant.store_id}"
            except (TokenDeniedError, NotFoundError):
                actions["denials"] += 1
                return "actuation denied"
        if node.output == "export":
            payload = {
                "app_id": app.app_id,
                "schema_id": node.config.get("schema_id", "result-v1"),
                "result": value,
                "produced_at": now,
            }
            outcome = self.stage_export(app.app_id, payload,
                                        node.config.get("recipient", "unknown"),
                                        implicated_stores=implicated_stores, now=now)
            actions[outcome["status"]] = actions.get(outcome["status"], 0) + 1
            return f"export {outcome['status']}"
        raise DataboxError(f"unknown output kind {node.output!r}")

    # -- export queue --------------------------------------------------

    def stage_export(self, app_id: str, payload: dict, recipient: str,
                     implicated_stores=None, now: int | None = None) -> dict:
        app = self.apps.get(app_id)
        if app is None:
            raise NotFoundError(f"app {app_id!r} not loaded")
        now = self.clock.now_ms() if now is None else now
        pseudo = export_store_id(app_id)
        if self.arbiter.active_policy(app_id, pseudo) is None:
            # Accredited (no-export) apps can never reach dispatch: no
            # export-stage policy exists for them to mint against.
            raise TokenDeniedError("action-not-granted")
        token = self.arbiter.mint_token(app_id, pseudo)
        decision = self.arbiter.verify(token, pseudo, "export-stage", now)
        if not decision.allowed:
            raise TokenDeniedError(decision.reason)
        period = app.sla.report_period_ms or 0
        with self._export_lock:
            if (app.last_export_event_ms is not None
                    and now - app.last_export_event_ms < period):
                return {"status": "deferred",
                        "retry_at": app.last_export_event_ms + period}
            app.last_export_event_ms = now
            self._export_count += 1
            item = ExportItem(
                item_id=f"exp-{self._export_count}",
                app_id=app_id,
                recipient=recipient,
                payload=payload,
                staged_at=now,
                audit_store_id=(implicated_stores[0] if implicated_stores
                                else (app.sla.grants[0].store_id if app.sla.grants else None)),
            )
            self.exports[item.item_id] = item
        if app.sla.preview_required:
            for owner in self._implicated_owners(app, implicated_stores):
                self.notify(owner, "export-preview",
                            {"item_id": item.item_id, "app_id": app_id,
                             "recipient": recipient})
            return {"status": "staged", "item_id": item.item_id}
        with self._export_lock:
            item.state = "approved"
        self._dispatch(item)
        return {"status": "dispatched", "item_id": item.item_id}

    def _implicated_owners(self, app, implicated_stores):
        owners = set()
        store_ids = implicated_stores or [g.store_id for g in app.sla.grants]
        for sid in store_ids:
            try:
                owners |= self.stores.store_meta(sid)["owner_ids"]
            except NotFoundError:
                pass
        return sorted(owners) or [app.sla.user_id]

    def decide_export(self, item_id: str, decision: str, user: str) -> dict:
        item = self.exports.get(item_id)
        if item is None:
            raise NotFoundError(f"unknown export item {item_id!r}")
        app = self.apps.get(item.app_id)
        if app is not None and item.audit_store_id is not None:
            owners = self.stores.store_meta(item.audit_store_id)["owner_ids"]
            if user != "system" and user not in owners:
                raise DataboxError(f"{user!r} does not own an implicated source",
                                   code="NOT-AUTHORIZED")
        with self._export_lock:
            if item.state != "staged":  # first writer wins
                return {"item_id": item_id, "state": item.state}
            item.state = "approved" if decision == "approve" else "denied"
            item.decided_by = user
        if item.state == "approved":
            self._dispatch(item)
        else:
            self.event_log("export-denied",
                           {"item_id": item_id, "app_id": item.app_id, "by": user})
        return {"item_id": item_id, "state": item.state}

    def _dispatch(self, item: ExportItem) -> None:
        with self._export_lock:
            if item.state != "approved":
                return
            item.state = "dispatched"
            self._frame_count += 1
            frame = {
                "frame_no": self._frame_count,
                "item_id": item.item_id,
                "app_id": item.app_id,
                "recipient": item.recipient,
                "payload": item.payload,
                "time": self.clock.now_ms(),
            }
            with self.comms_log_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(frame, sort_keys=True) + "\n")
        if item.audit_store_id:
            self.stores.record_export(
                item.audit_store_id, item.app_id,
                {"item_id": item.item_id, "recipient": item.recipient,
                 "frame_no": frame["frame_no"]})
        self.dispatch_sink(frame)

    def staged_exports(self) -> list[ExportItem]:
        return [i for i in self.exports.values() if i.state == "staged"]

    # -- inspection ----------------------------------------------------

    def inspect(self, app_id: str, run_id: str) -> ProvenanceTrace:
        app = self.apps.get(app_id)
        if app is None:
            raise NotFoundError(f"app {app_id!r} not loaded")
        for run in app.runs:
            if run.run_id == run_id:
                return run
        raise NotFoundError(f"unknown run {run_id!r}")

    def runs(self, app_id: str) -> list[str]:
        app = self.apps.get(app_id)
        if app is None:
            raise NotFoundError(f"app {app_id!r} not loaded")
        return [r.run_id for r in app.runs]

    # -- lifecycle -----------------------------------------------------

    def stop_app(self, app_id: str) -> None:
        """Stop ticking without revoking (used on consent withdrawal; the
        manifest engine handles revocation)."""
        app = self.apps.get(app_id)
        if app is not None:
            app.terminated = True
            self._deny_staged(app_id)

    def terminate(self, app_id: str) -> dict:
        app = self.apps.get(app_id)
        if app is None:
            return {"status": "terminated", "app_id": app_id}  # idempotent
        with app.lock:
            app.terminated = True
        denied = self._deny_staged(app_id)
        revoked = self.arbiter.revoke(app_id)
        return {"status": "terminated", "app_id": app_id,
                "staged_denied": denied, "policies_revoked": revoked}

    def _deny_staged(self, app_id: str) -> int:
        n = 0
        for item in list(self.exports.values()):
            if item.app_id == app_id and item.state == "staged":
                self.decide_export(item.item_id, "deny", "system")
                n += 1
        return n

    def comms_log_bytes(self) -> int:
        return self.comms_log_path.stat().st_size if self.comms_log_path.exists() else 0

    def comms_frames(self) -> list[dict]:
        if not self.comms_log_path.exists():
            return []
        return [json.loads(line) for line in
                self.comms_log_path.read_text().splitlines() if line]
