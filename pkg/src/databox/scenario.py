"""Scenario scripts: reproducible end-to-end runs over the gateway routes.

A script is a YAML document::

    seed: 42
    steps:
      - {op: create-account, name: Alice, role: owner, alias: alice}
      - {op: add-source, kind: energy-meter, label: mains, owners: [alice],
         source_id: energy-1}
      - {op: start-driver, source_id: energy-1, seed: 7, cadence_ms: 60000}
      - {op: publish-demo, name: occupancy-demo}
      - {op: install, app: occupancy-demo, user: alice, choices: {...}}
      - {op: advance, ms: 86400000, step_ms: 3600000}
      - {op: decide-export, decision: approve, user: alice}
      - {op: withdraw, app: occupancy-demo}
      - {op: terminate, app: occupancy-demo}

Every step goes through ``Gateway.api_dispatch``, so scripted runs exercise
exactly the surface the dashboard and CLI use.
"""

from __future__ import annotations

from importlib import resources

import yaml

from .errors import DataboxError
from .gateway import Gateway
from .platform import Platform


def demo_package(name: str) -> dict:
    """Load a bundled demo package (flow + manifest), SDK-verified."""
    base = resources.files("databox.data.demo")
    flow = yaml.safe_load(base.joinpath(f"{name}.flow.yaml").read_text())
    manifest = yaml.safe_load(base.joinpath(f"{name}.manifest.yaml").read_text())
    return {"flow": flow, "manifest": manifest, "verified": True}


def default_choices(manifest: dict, stores: list[dict],
                    report_period_ms=None, preview=True) -> dict:
    """Choice vector selecting every source at its slowest offered period,
    mapped to the first available store of each kind."""
    by_kind = {}
    for st in stores:
        by_kind.setdefault(st["kind"], st["store_id"])
    sources = {}
    for src in manifest["short"]["sources"]:
        kind = src["kind"]
        if kind not in by_kind:
            if src.get("optional", False):
                continue
            raise DataboxError(f"no store available for mandatory kind {kind!r}")
        sources[kind] = {
            "selected": True,
            "store_id": by_kind[kind],
            "sample_period_ms": max(src["sample_periods_ms"]),
        }
    choices = {"sources": sources, "preview": preview}
    if manifest["short"].get("off_box"):
        offered = manifest["short"]["report_periods_ms"]
        choices["report_period_ms"] = (
            report_period_ms if report_period_ms in offered else min(offered)
        )
    return choices


class ScenarioRunner:
    def __init__(self, data_dir, seed: int = 0, gateway: Gateway | None = None):
        self.gateway = gateway or Gateway(Platform(data_dir, seed=seed))
        self.platform = self.gateway.platform
        self.aliases: dict[str, str] = {}  # alias -> user_id
        self.sessions: dict[str, str] = {}  # user_id -> session id
        self.owner_alias: str | None = None  # default actor across run() calls
        self.log: list[dict] = []

    # -- gateway plumbing ----------------------------------------------

    def _user(self, ref: str) -> str:
        return self.aliases.get(ref, ref)

    def _session(self, ref: str) -> str:
        user_id = self._user(ref)
        if user_id not in self.sessions:
            r = self.gateway.api_dispatch(
                {"method": "POST", "path": "/session", "body": {"user_id": user_id}})
            if r["status"] != 200:
                raise DataboxError(f"login failed for {user_id}: {r['body']}")
            self.sessions[user_id] = r["body"]["session"]
        return self.sessions[user_id]

    def call(self, method, path, user=None, body=None, expect=200):
        auth = {"session": self._session(user)} if user else {}
        r = self.gateway.api_dispatch(
            {"method": method, "path": path, "auth": auth, "body": body or {}})
        self.log.append({"path": path, "status": r["status"]})
        if expect is not None and r["status"] != expect:
            raise DataboxError(f"{method} {path} -> {r['status']}: {r['body']}")
        return r["body"]

    # -- script execution ----------------------------------------------

    def run(self, script: dict) -> dict:
        for step in script.get("steps", []):
            op = step["op"]
            if op == "create-account":
                if not self.platform.accounts:
                    user_id = self.platform.create_account(step["name"], step["role"])
                else:
                    body = self.call("POST", "/accounts", user=self.owner_alias,
                                     body={"name": step["name"], "role": step["role"]})
                    user_id = body["user_id"]
                alias = step.get("alias", step["name"].lower())
                self.aliases[alias] = user_id
                if step["role"] == "owner" and self.owner_alias is None:
                    self.owner_alias = alias
            elif op == "add-source":
                owners = [self._user(u) for u in step["owners"]]
                self.call("POST", "/sources", user=self.owner_alias, body={
                    "kind": step["kind"], "label": step.get("label", ""),
                    "owner_ids": owners, "source_id": step.get("source_id")})
            elif op == "start-driver":
                self.call("POST", "/drivers", user=self.owner_alias, body={
                    "source_id": step["source_id"], "seed": step.get("seed", 0),
                    "cadence_ms": step.get("cadence_ms", 10_000),
                    "params": step.get("params")})
            elif op == "stop-driver":
                self.call("POST", "/drivers/stop", user=self.owner_alias,
                          body={"source_id": step["source_id"]})
            elif op == "publish-demo":
                self.call("POST", "/apps/publish", user=self.owner_alias,
                          body={"package": demo_package(step["name"])})
            elif op == "publish":
                self.call("POST", "/apps/publish", user=self.owner_alias,
                          body={"package": step["package"]})
            elif op == "install":
                listing = self.call("GET", f"/apps/{step['app']}",
                                    user=step.get("user", self.owner_alias))
                stores = self.call("GET", "/stores",
                                   user=step.get("user", self.owner_alias))["stores"]
                choices = step.get("choices") or default_choices(
                    listing["manifest"], stores,
                    report_period_ms=step.get("report_period_ms"),
                    preview=step.get("preview", True))
                self.call("POST", f"/apps/{step['app']}/install",
                          user=step.get("user", self.owner_alias),
                          body={"choices": choices})
            elif op == "advance":
                self.call("POST", "/tick", user=self.owner_alias, body={
                    "advance_ms": step["ms"], "step_ms": step.get("step_ms")})
            elif op == "tick":
                self.call("POST", "/tick", user=self.owner_alias, body={})
            elif op == "decide-export":
                staged = self.call("GET", "/exports", user=step.get("user", self.owner_alias),
                                   body={"state": "staged"})["exports"]
                take = step.get("count", 1)
                for item in staged[:take]:
                    self.call("POST", f"/exports/{item['item_id']}/decide",
                              user=step.get("user", self.owner_alias),
                              body={"decision": step["decision"]})
            elif op == "withdraw":
                sla_id = self.platform.installed[step["app"]]
                self.call("POST", f"/slas/{sla_id}/withdraw",
                          user=step.get("user", self.owner_alias))
            elif op == "terminate":
                self.call("POST", f"/apps/{step['app']}/terminate",
                          user=step.get("user", self.owner_alias))
            elif op == "manage-store":
                self.call("POST", f"/stores/{step['store_id']}/manage",
                          user=step.get("user", self.owner_alias),
                          body={"op": step["manage_op"], "range": step.get("range")})
            elif op == "rate":
                self.call("POST", f"/apps/{step['app']}/rate",
                          user=step.get("user", self.owner_alias),
                          body={"stars": step["stars"]})
            else:
                raise DataboxError(f"unknown scenario op {op!r}")
        return self.summary()

    def summary(self) -> dict:
        return {
            "audit": self.platform.audit_dump(),
            "audit_no_wallclock": self.platform.audit_dump(redact_wallclock=True),
            "receipts": self.platform.receipts(),
            "events": list(self.platform.events),
            "notifications": [n.to_dict() for n in
                              self.platform.notifications.values()],
        }


def run_script_text(text: str, data_dir) -> dict:
    script = yaml.safe_load(text)
    runner = ScenarioRunner(data_dir, seed=script.get("seed", 0))
    return runner.run(script)
