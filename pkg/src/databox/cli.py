"""Command line client.

Runs against a data directory, persisting platform state between
invocations, and drives everything through the same route dispatch the
socket server exposes.
"""

from __future__ import annotations

import json
import sys

import click
import yaml

from .errors import DataboxError
from .flows import parse_flow
from .gateway import Gateway
from .manifests import canonical_json, validate_manifest
from .platform import Platform
from .risk import RiskEngine
from .scenario import ScenarioRunner, default_choices, demo_package


class CliState:
    def __init__(self, data_dir: str, seed: int, as_json: bool):
        self.platform = Platform(data_dir, seed=seed)
        self.platform.load_state()
        self.gateway = Gateway(self.platform)
        self.as_json = as_json

    def call(self, method, path, user=None, body=None):
        auth = {}
        if user:
            r = self.gateway.api_dispatch(
                {"method": "POST", "path": "/session", "body": {"user_id": user}})
            if r["status"] != 200:
                raise click.ClickException(f"login failed: {r['body']}")
            auth = {"session": r["body"]["session"]}
        r = self.gateway.api_dispatch(
            {"method": method, "path": path, "auth": auth, "body": body or {}})
        if r["status"] != 200:
            raise click.ClickException(
                f"{method} {path} -> {r['status']}: {json.dumps(r['body'])}")
        return r["body"]

    def emit(self, obj):
        if self.as_json:
            click.echo(json.dumps(obj, indent=2, sort_keys=True))
        else:
            click.echo(yaml.safe_dump(obj, sort_keys=True).rstrip())

    def save(self):
        self.platform.save_state()


def _load_doc(path: str) -> dict:
    with open(path) as fh:
        return yaml.safe_load(fh)


@click.group()
@click.option("--data-dir", default="./databox-data", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of YAML.")
@click.pass_context
def main(ctx, data_dir, seed, as_json):
    """Personal data platform: stores, consent, apps, exports."""
    ctx.obj = CliState(data_dir, seed, as_json)


@main.command()
@click.argument("manifest_file")
@click.pass_obj
def validate(cli, manifest_file):
    """Check a manifest document; exit 1 listing violations if invalid."""
    violations = validate_manifest(_load_doc(manifest_file))
    cli.emit({"valid": not violations, "violations": violations})
    if violations:
        sys.exit(1)


@main.command()
@click.argument("flow_file")
@click.argument("manifest_file")
@click.pass_obj
def risk(cli, flow_file, manifest_file):
    """Rate an app package and report accreditation."""
    flow = parse_flow(_load_doc(flow_file))
    manifest = _load_doc(manifest_file)
    engine = RiskEngine()
    rating = engine.app_risk(flow, manifest)
    cli.emit({"risk": rating.to_dict(),
              "accredited": engine.accredit(flow, manifest)})


@main.command()
@click.option("--name", required=True)
@click.option("--role", default="owner", type=click.Choice(["owner", "member"]))
@click.option("--user", default=None, help="Acting owner (omit to bootstrap).")
@click.pass_obj
def account(cli, name, role, user):
    """Create a user account."""
    if user:
        out = cli.call("POST", "/accounts", user=user,
                       body={"name": name, "role": role})
    else:
        out = {"user_id": cli.platform.create_account(name, role)}
    cli.save()
    cli.emit(out)


@main.command()
@click.option("--kind", required=True)
@click.option("--label", default="")
@click.option("--owner", "owners", multiple=True, required=True)
@click.option("--source-id", default=None)
@click.option("--user", required=True)
@click.pass_obj
def source(cli, kind, label, owners, source_id, user):
    """Register a data source; its store is created alongside."""
    out = cli.call("POST", "/sources", user=user, body={
        "kind": kind, "label": label, "owner_ids": list(owners),
        "source_id": source_id})
    cli.save()
    cli.emit(out)


@main.command()
@click.option("--source-id", required=True)
@click.option("--driver-seed", default=0, type=int)
@click.option("--cadence-ms", default=10_000, type=int)
@click.option("--user", required=True)
@click.pass_obj
def driver(cli, source_id, driver_seed, cadence_ms, user):
    """Start a simulated device driver for a source."""
    out = cli.call("POST", "/drivers", user=user, body={
        "source_id": source_id, "seed": driver_seed, "cadence_ms": cadence_ms})
    cli.save()
    cli.emit(out)


@main.command()
@click.option("--flow", "flow_file", default=None)
@click.option("--manifest", "manifest_file", default=None)
@click.option("--demo", default=None, help="Bundled demo package name.")
@click.option("--unverified", is_flag=True)
@click.option("--user", required=True)
@click.pass_obj
def publish(cli, flow_file, manifest_file, demo, unverified, user):
    """Publish an app package to the store."""
    if demo:
        package = demo_package(demo)
    elif flow_file and manifest_file:
        package = {"flow": _load_doc(flow_file),
                   "manifest": _load_doc(manifest_file),
                   "verified": not unverified}
    else:
        raise click.ClickException("need --demo or both --flow and --manifest")
    out = cli.call("POST", "/apps/publish", user=user, body={"package": package})
    cli.save()
    cli.emit(out)


@main.command()
@click.option("--user", required=True)
@click.pass_obj
def apps(cli, user):
    """List store listings, best first."""
    cli.emit(cli.call("GET", "/apps", user=user))


@main.command()
@click.argument("app_id")
@click.option("--choices", "choices_file", default=None,
              help="YAML/JSON choice vector; defaults to slowest periods.")
@click.option("--user", required=True)
@click.pass_obj
def install(cli, app_id, choices_file, user):
    """Resolve consent choices into an agreement and start the app."""
    if choices_file:
        choices = _load_doc(choices_file)
    else:
        listing = cli.call("GET", f"/apps/{app_id}", user=user)
        stores = cli.call("GET", "/stores", user=user)["stores"]
        choices = default_choices(listing["manifest"], stores)
    out = cli.call("POST", f"/apps/{app_id}/install", user=user,
                   body={"choices": choices})
    cli.save()
    cli.emit(out)


@main.command()
@click.argument("sla_id")
@click.option("--user", required=True)
@click.option("--canonical", is_flag=True,
              help="Print the signed receipt as canonical JSON on one line.")
@click.pass_obj
def receipt(cli, sla_id, user, canonical):
    """Show the signed record of an agreement."""
    out = cli.call("GET", f"/slas/{sla_id}/receipt", user=user)
    if canonical:
        click.echo(canonical_json(out))
    else:
        cli.emit(out)


@main.command()
@click.argument("sla_id")
@click.option("--user", required=True)
@click.pass_obj
def withdraw(cli, sla_id, user):
    """Withdraw consent: revokes access and stops the app."""
    out = cli.call("POST", f"/slas/{sla_id}/withdraw", user=user)
    cli.save()
    cli.emit(out)


@main.command()
@click.argument("app_id")
@click.option("--user", required=True)
@click.pass_obj
def terminate(cli, app_id, user):
    """Remove an app; staged exports are denied, access revoked."""
    out = cli.call("POST", f"/apps/{app_id}/terminate", user=user)
    cli.save()
    cli.emit(out)


@main.command()
@click.option("--advance-ms", default=None, type=int)
@click.option("--step-ms", default=None, type=int)
@click.option("--user", required=True)
@click.pass_obj
def tick(cli, advance_ms, step_ms, user):
    """Run drivers and apps; with --advance-ms, move the virtual clock."""
    out = cli.call("POST", "/tick", user=user,
                   body={"advance_ms": advance_ms, "step_ms": step_ms})
    cli.save()
    cli.emit(out)


@main.command()
@click.option("--state", default=None,
              type=click.Choice(["staged", "approved", "denied", "dispatched"]))
@click.option("--approve", "decision", flag_value="approve")
@click.option("--deny", "decision", flag_value="deny")
@click.option("--item", "item_id", default=None)
@click.option("--user", required=True)
@click.pass_obj
def exports(cli, state, decision, item_id, user):
    """List staged exports, or decide one with --approve/--deny --item."""
    if decision:
        if not item_id:
            raise click.ClickException("--approve/--deny needs --item")
        out = cli.call("POST", f"/exports/{item_id}/decide", user=user,
                       body={"decision": decision})
        cli.save()
    else:
        out = cli.call("GET", "/exports", user=user, body={"state": state})
    cli.emit(out)


@main.command()
@click.option("--store", "store_id", default=None)
@click.option("--redact-wallclock", is_flag=True)
@click.option("--user", required=True)
@click.pass_obj
def audit(cli, store_id, redact_wallclock, user):
    """Dump audit records for one store or the whole platform."""
    if store_id:
        out = cli.call("GET", f"/stores/{store_id}/audit", user=user)
    else:
        out = cli.call("GET", "/audit-dump", user=user,
                       body={"redact_wallclock": redact_wallclock})
    cli.emit(out)


@main.command()
@click.argument("script_file")
@click.pass_context
def scenario(ctx, script_file):
    """Run a scripted end-to-end scenario against a fresh platform."""
    cli = ctx.obj
    script = _load_doc(script_file)
    runner = ScenarioRunner(cli.platform.data_dir,
                            seed=script.get("seed", cli.platform.seed or 0))
    try:
        summary = runner.run(script)
    except DataboxError as exc:
        raise click.ClickException(str(exc))
    runner.platform.save_state()
    cli.emit({"audit_records": len(summary["audit"]),
              "receipts": len(summary["receipts"]),
              "events": [e["kind"] for e in summary["events"]]})


if __name__ == "__main__":
    main()
