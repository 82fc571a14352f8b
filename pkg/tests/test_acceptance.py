"""Acceptance suite: each test is one platform-level guarantee, checked at
full scale. One pass/fail line per test is printed in the terminal summary.
"""

import random
import time

import pytest

from databox.arbiter import AccessToken, Arbiter, Policy
from databox.clock import VirtualClock
from databox.errors import TokenDeniedError, ValidationError
from databox.flows import parse_flow
from databox.manifests import (
    ART13_TEXT_FIELDS,
    ManifestEngine,
    export_store_id,
    validate_manifest,
)
from databox.platform import Platform
from databox.risk import FACTORS, RiskEngine
from databox.scenario import ScenarioRunner, demo_package
from databox.stores import DataSource, QuerySpec, RecordSchema, StoreEngine

from conftest import (
    DAY,
    HOUR,
    populate_home,
    simple_choices,
    simple_manifest,
)
from oracles import is_topological, reference_decide
from test_risk import manifest_for, random_flow_doc


def occupancy_scenario(tmp_path, name, advance_ms, step_ms=600_000, seed=42):
    runner = ScenarioRunner(tmp_path / name, seed=seed)
    populate_home(runner)
    runner.run({"steps": [
        {"op": "publish-demo", "name": "occupancy-demo"},
        {"op": "install", "app": "occupancy-demo"},
        {"op": "advance", "ms": advance_ms, "step_ms": step_ms},
    ]})
    return runner


def test_dataware_loop_end_to_end(tmp_path):
    """Request -> token -> process -> preview -> approve -> dispatch, with
    exactly one receipt whose payload equals the previewed payload, in <10 s."""
    t0 = time.monotonic()
    runner = occupancy_scenario(tmp_path, "box", advance_ms=2 * HOUR)
    p = runner.platform
    staged = p.runtime.staged_exports()
    assert staged, "no export reached the preview queue"
    previewed = staged[0].payload
    runner.call("POST", f"/exports/{staged[0].item_id}/decide",
                user="alice", body={"decision": "approve"})
    receipts = p.receipts()
    assert len(receipts) == 1
    assert receipts[0]["frame"]["payload"] == previewed
    assert receipts[0]["recipient"] == "acme-insurance"
    # the loop was fully token-mediated: every query audit carries a policy
    queries = [r for r in p.audit_dump() if r["action"] == "query"]
    assert queries and all(r["detail"]["policy_id"] for r in queries)
    assert time.monotonic() - t0 < 10.0


def test_audit_completeness_1000_ops(tmp_path):
    """Exactly one audit record per operation over 1000 randomized ops."""
    clock = VirtualClock(0)
    eng = StoreEngine(tmp_path / "s", tmp_path / "k.json", clock)
    allowed = {"value": True}

    class D:
        def __init__(self, ok):
            self.allowed = ok
            self.app_id = "app-x"
            self.policy_id = "pol-x" if ok else None
            self.token_fp = "fp"
            self.reason = None if ok else "revoked"

    eng.verifier = lambda *a, **k: D(allowed["value"])
    stores = [
        eng.create_store(
            DataSource(source_id=f"src-{i}", kind="generic", owner_ids={"u1"}),
            RecordSchema(fields=(("state", "text", ""),)))
        for i in range(5)
    ]
    rng = random.Random(99)
    expected = {a: 0 for a in ("append", "query", "actuate", "export",
                               "redact", "clear", "token-denied")}
    for _ in range(1000):
        clock.advance(1000)
        sid = rng.choice(stores)
        op = rng.choice(["append", "append", "query", "query", "actuate",
                         "denied-query", "redact", "clear", "export"])
        if op == "append":
            eng.append(sid, clock.now_ms(), ("x",))
            expected["append"] += 1
        elif op == "query":
            allowed["value"] = True
            eng.query(sid, "tok", QuerySpec(0, clock.now_ms() + 1))
            expected["query"] += 1
        elif op == "denied-query":
            allowed["value"] = False
            with pytest.raises(TokenDeniedError):
                eng.query(sid, "tok", QuerySpec(0, clock.now_ms() + 1))
            expected["token-denied"] += 1
            allowed["value"] = True
        elif op == "actuate":
            allowed["value"] = True
            eng.actuate(sid, "tok", {"set": "on"})
            expected["actuate"] += 1
        elif op == "redact":
            eng.manage_store(sid, "redact", "u1",
                             t_range=(0, rng.randrange(1, clock.now_ms() + 1)))
            expected["redact"] += 1
        elif op == "clear":
            eng.manage_store(sid, "clear", "u1")
            expected["clear"] += 1
        elif op == "export":
            eng.record_export(sid, "app-x", {"frame_no": expected["export"] + 1})
            expected["export"] += 1
    assert sum(expected.values()) == 1000
    observed = {a: 0 for a in expected}
    for sid in stores:
        for rec in eng.read_audit(sid, "u1"):
            observed[rec.action] += 1
    assert observed == expected  # zero tolerance


def _fuzz_arbiter():
    arb = Arbiter(b"fuzz-root-secret-fuzz-root-secret", VirtualClock(0))
    policies = [
        Policy(policy_id=f"pol-{i}", sla_id=f"sla-{i % 3}", app_id=f"app-{i % 4}",
               store_id=f"store-{i % 5}",
               actions=frozenset(a) if (a := [["query"], ["query", "actuate"],
                                             ["export-stage"]][i % 3]) else None,
               max_sample_period_ms=[10_000, 60_000, HOUR][i % 3],
               expiry=[10 * HOUR, 50 * HOUR, 100 * HOUR][i % 3],
               revoked=(i % 7 == 0))
        for i in range(12)
    ]
    for pol in policies:
        arb._policies[pol.policy_id] = pol  # direct load: keep revoked ones too
    return arb


def test_token_fuzz_10k_forgeries_all_denied():
    arb = _fuzz_arbiter()
    rng = random.Random(4)
    wires = []
    for pol in arb._policies.values():
        if not pol.revoked:
            wires.append(arb.mint_token(pol.app_id, pol.store_id))
    denied = 0
    total = 10_000
    for i in range(total):
        wire = rng.choice(wires)
        mode = rng.randrange(3)
        if mode == 0:
            # flip one hex digit of the mac
            head, _, mac = wire.rpartition(".")
            pos = rng.randrange(len(mac))
            repl = rng.choice([c for c in "0123456789abcdef" if c != mac[pos]])
            forged = head + "." + mac[:pos] + repl + mac[pos + 1:]
        elif mode == 1:
            # tamper with a caveat and re-serialize without fixing the mac
            tok = AccessToken.parse(wire)
            k, v = tok.caveats[rng.randrange(len(tok.caveats))]
            caveats = tuple((ck, v + "x" if ck == k else cv)
                            for ck, cv in tok.caveats)
            forged = AccessToken(tok.token_id, caveats, tok.mac).serialize()
        else:
            # structural garbage
            forged = rng.choice([
                "", "dbx1", "dbx1..", f"dbx2.{wire.split('.')[1]}.00" * 1,
                wire + ".", wire.replace(".", "", 1),
                "dbx1.!!notbase64!!." + "0" * 64,
            ])
        store = rng.choice([f"store-{j}" for j in range(5)])
        d = arb.verify(forged, store, "query", rng.randrange(0, 100 * HOUR))
        if not d.allowed:
            denied += 1
    assert denied == total  # 100% denial


def test_token_decisions_match_reference_10k():
    arb = _fuzz_arbiter()
    rng = random.Random(13)
    wires = [arb.mint_token(p.app_id, p.store_id)
             for p in arb._policies.values() if not p.revoked]
    mismatches = 0
    for i in range(10_000):
        wire = rng.choice(wires)
        if rng.random() < 0.25:
            pos = rng.randrange(len(wire))
            wire = wire[:pos] + rng.choice("abcdef019.=_") + wire[pos + 1:]
        store = f"store-{rng.randrange(6)}"
        action = rng.choice(["query", "actuate", "export-stage"])
        now = rng.randrange(0, 120 * HOUR)
        last = rng.choice([None, max(0, now - rng.randrange(0, 2 * HOUR))])
        snap = arb.to_dict()
        ledger = {tuple(k.split("|", 1)): v for k, v in snap["grants"].items()}
        expect = reference_decide(b"fuzz-root-secret-fuzz-root-secret",
                                  snap["policies"], ledger, wire, store,
                                  action, now, last)
        got = arb.verify(wire, store, action, now, last)
        if (got.allowed, got.reason) != expect:
            mismatches += 1
    assert mismatches == 0


def test_rate_enforcement_zero_violations(tmp_path):
    """Consecutive allowed queries per (app, store) are >= the granted
    sample period apart, for the whole scenario trace."""
    runner = occupancy_scenario(tmp_path, "box", advance_ms=12 * HOUR,
                                step_ms=5 * 60_000)
    p = runner.platform
    sla = p.manifests.slas[p.installed["occupancy-demo"]]
    periods = {g.store_id: g.sample_period_ms for g in sla.grants}
    by_pair = {}
    for rec in p.audit_dump():
        if rec["action"] != "query":
            continue
        pair = (rec["actor"][1], rec["store_id"])
        by_pair.setdefault(pair, []).append(rec["time"])
    assert by_pair, "no queries in the trace"
    violations = 0
    for (app, store), times in by_pair.items():
        period = periods[store]
        for a, b in zip(times, times[1:]):
            if b - a < period:
                violations += 1
    assert violations == 0


def test_accreditation_soundness_1000_flows(tmp_path):
    """accredit=true implies the compiled policy set cannot stage an export
    and a full run moves zero bytes across the boundary; plus monotonicity."""
    rng = random.Random(77)
    p = Platform(tmp_path / "box", seed=3)
    owner = p.create_account("Alice", "owner")
    kinds = ["energy-meter", "door-sensor", "presence", "alarm",
             "microphone-level", "generic"]
    store_by_kind = {}
    for kind in kinds:
        sid = p.add_source(kind, f"{kind}-dev", [owner], source_id=f"{kind}-0")
        store_by_kind[kind] = sid
        if kind != "generic":
            p.start_driver(f"{kind}-0", seed=1, cadence_ms=60_000)
    p.advance(30 * 60_000, step_ms=10 * 60_000)
    risk = RiskEngine()
    engine = ManifestEngine(p.clock, b"acceptance-receipts-secret-xxxxx")

    accredited_run = 0
    for i in range(1000):
        doc = random_flow_doc(rng)
        doc["app_id"] = f"rand-{i}"
        flow = parse_flow(doc)
        off_box = bool(flow.export_nodes())
        manifest = manifest_for(doc, off_box=off_box)
        # manifest must grant every kind the flow touches
        needed = {n.source_kind for n in flow.nodes_of_kind("source")}
        needed |= {n.config["target_kind"] for n in flow.nodes_of_kind("output")
                   if n.output == "actuation"}
        manifest["short"]["sources"] = [
            {"kind": k, "actions": ["query", "actuate"],
             "sample_periods_ms": [60_000]} for k in sorted(needed)]
        if not risk.accredit(flow, manifest):
            continue
        choices = {"sources": {k: {"selected": True,
                                   "store_id": store_by_kind[k],
                                   "sample_period_ms": 60_000}
                               for k in sorted(needed)},
                   "preview": False}
        sla = engine.resolve_choices(manifest, owner, choices)
        policies = engine.compile(sla)
        # soundness, statically: no export-stage policy can exist
        assert all(pol.store_id != export_store_id(doc["app_id"])
                   for pol in policies)
        # soundness, dynamically: load, run, and watch the boundary
        before = p.runtime.comms_log_bytes()
        p.runtime.load_app(flow, sla, manifest)
        p.arbiter.register_policy(policies, sla.sla_id)
        p.clock.advance(60_000)
        p.runtime.tick(doc["app_id"])
        with pytest.raises(TokenDeniedError):
            p.runtime.stage_export(doc["app_id"], {"leak": 1}, "cloud")
        assert p.runtime.comms_log_bytes() == before == 0
        frames = [f for f in p.runtime.comms_frames()
                  if f["app_id"] == doc["app_id"]]
        assert frames == []
        p.runtime.terminate(doc["app_id"])
        accredited_run += 1
    assert accredited_run > 100  # the sample really exercised the property


def test_risk_monotonicity_1000_additions():
    """Adding any single node never lowers any factor level (0 counterexamples)."""
    rng = random.Random(101)
    risk = RiskEngine()
    extras = [
        {"id": "xn", "kind": "output", "output": "export", "params": {}},
        {"id": "xn", "kind": "output", "output": "actuation",
         "params": {"target_kind": "alarm"}},
        {"id": "xn", "kind": "output", "output": "derived-store", "params": {}},
        {"id": "xn", "kind": "source", "source_kind": "microphone-level"},
    ]
    counterexamples = 0
    for _ in range(250):
        doc = random_flow_doc(rng, with_export=False)
        base = risk.app_risk(parse_flow(doc), manifest_for(doc, off_box=False))
        for extra in extras:
            if extra["kind"] == "source":
                edges = doc["edges"] + [["xn", "p0"]]
            else:
                edges = doc["edges"] + [["p0", "xn"]]
            doc2 = {"app_id": doc["app_id"], "nodes": doc["nodes"] + [extra],
                    "edges": edges}
            off_box = extra.get("output") == "export"
            bigger = risk.app_risk(parse_flow(doc2),
                                   manifest_for(doc2, off_box=off_box))
            if bigger.overall < base.overall or any(
                    bigger.factors[f]["level"] < base.factors[f]["level"]
                    for f in FACTORS):
                counterexamples += 1
    assert counterexamples == 0


def test_manifest_gate_per_field(tmp_path):
    """Publish and install each refuse a package missing any single
    condensed-layer disclosure field or any whole layer."""
    p = Platform(tmp_path / "box", seed=5)
    owner = p.create_account("Alice", "owner")
    p.add_source("energy-meter", "mains", [owner], source_id="energy-1")

    def package(manifest):
        from conftest import simple_flow
        return {"flow": simple_flow(), "manifest": manifest, "verified": True}

    mutations = []
    for field in ART13_TEXT_FIELDS:
        def drop(doc, field=field):
            del doc["condensed"][field]
        mutations.append((f"condensed.{field}", drop))
    for layer in ("short", "condensed", "legal"):
        def drop_layer(doc, layer=layer):
            del doc[layer]
        mutations.append((f"layer.{layer}", drop_layer))
    for name, mutate in mutations:
        doc = simple_manifest()
        mutate(doc)
        assert validate_manifest(doc), name
        with pytest.raises(ValidationError):
            p.appstore.publish(package(doc))
        # install gate: a listing gone stale after publication is refused too
        good = p.appstore.publish(package(simple_manifest()))
        mutate(good.package["manifest"])
        with pytest.raises(ValidationError):
            p.install_app("test-app", owner, simple_choices())
        del p.appstore.listings["test-app"]
    # and the intact package sails through both gates
    p.appstore.publish(package(simple_manifest()))
    sla = p.install_app("test-app", owner, simple_choices())
    assert sla.sla_id in p.manifests.slas


def test_occupancy_matrix_seven_days(tmp_path):
    """24 hour-buckets of probabilities in [0,1] after 7 simulated days, and
    provenance entries in topological order, one per executed node."""
    runner = occupancy_scenario(tmp_path, "box", advance_ms=7 * DAY,
                                step_ms=HOUR)
    p = runner.platform
    matrix = p.runtime.apps["occupancy-demo"].viz.get("viz-matrix")
    assert isinstance(matrix, list) and len(matrix) == 24
    assert all(isinstance(v, float) and 0.0 <= v <= 1.0 for v in matrix)
    # the fitted estimator actually discriminates across the day
    assert max(matrix) - min(matrix) > 0.01
    flow = parse_flow(demo_package("occupancy-demo")["flow"])
    runs = p.runtime.runs("occupancy-demo")
    assert runs
    for run_id in runs:
        trace = p.runtime.inspect("occupancy-demo", run_id)
        ids = [e.node_id for e in trace.entries]
        assert len(ids) == len(set(ids))  # exactly one entry per executed node
        edges = [(a, b) for a, b in flow.edges if a in ids and b in ids]
        assert is_topological(ids, edges)


def test_one_source_three_process_five_output_app(tmp_path):
    """The 1/3/5-node demo loads, runs, actuates, and is not accredited."""
    runner = ScenarioRunner(tmp_path / "box", seed=8)
    runner.run({"steps": [
        {"op": "create-account", "name": "Bob", "role": "owner", "alias": "bob"},
        {"op": "add-source", "kind": "microphone-level", "label": "mic",
         "owners": ["bob"], "source_id": "mic-1"},
        {"op": "add-source", "kind": "generic", "label": "bulb",
         "owners": ["bob"], "source_id": "bulb-1"},
        {"op": "start-driver", "source_id": "mic-1", "seed": 3,
         "cadence_ms": 60_000},
        {"op": "publish-demo", "name": "soundlight"},
        {"op": "install", "app": "soundlight", "preview": False},
        {"op": "advance", "ms": 2 * HOUR, "step_ms": 600_000},
    ]})
    p = runner.platform
    flow = parse_flow(demo_package("soundlight")["flow"])
    assert len(flow.nodes_of_kind("source")) == 1
    assert len(flow.nodes_of_kind("process")) == 3
    assert len(flow.nodes_of_kind("output")) == 5
    listing = p.appstore.get("soundlight")
    assert listing.accredited is False
    codes = {r["code"] for r in listing.risk_report["reasons"]}
    assert "OFF-BOX" in codes  # the export node is why
    dump = p.audit_dump()
    assert [r for r in dump if r["action"] == "actuate"]
    assert [r for r in dump if r["action"] == "export"]
    assert p.runtime.runs("soundlight")


def test_withdrawal_liveness(tmp_path):
    """After withdrawal: staged exports auto-denied, zero allowed grants
    within one tick, zero boundary leaks."""
    runner = occupancy_scenario(tmp_path, "box", advance_ms=2 * HOUR)
    p = runner.platform
    assert p.runtime.staged_exports()
    receipts_before = len(p.receipts())
    sla_id = p.installed["occupancy-demo"]
    runner.call("POST", f"/slas/{sla_id}/withdraw", user="alice")
    assert p.runtime.staged_exports() == []
    denied = [i for i in p.runtime.exports.values() if i.state == "denied"]
    assert denied and all(i.decided_by == "system" for i in denied)
    seen = {(r["store_id"], r["audit_seq"]) for r in p.audit_dump()}
    p.advance(HOUR, step_ms=10 * 60_000)
    new = [r for r in p.audit_dump()
           if (r["store_id"], r["audit_seq"]) not in seen]
    allowed_actions = [r for r in new
                       if r["action"] in ("query", "actuate", "export")
                       and r["actor"] == ["app", "occupancy-demo"]]
    assert allowed_actions == []
    assert len(p.receipts()) == receipts_before == 0
    # terminate is equally final, and idempotent on the withdrawn app
    runner.call("POST", "/apps/occupancy-demo/terminate", user="alice")
    assert p.runtime.staged_exports() == []


def test_replay_determinism(tmp_path):
    """The same script twice yields identical audit dumps (wall clock aside)."""
    script = {"steps": [
        {"op": "publish-demo", "name": "occupancy-demo"},
        {"op": "install", "app": "occupancy-demo"},
        {"op": "advance", "ms": 6 * HOUR, "step_ms": 600_000},
        {"op": "decide-export", "decision": "approve"},
        {"op": "advance", "ms": 2 * HOUR, "step_ms": 600_000},
        {"op": "decide-export", "decision": "deny"},
        {"op": "terminate", "app": "occupancy-demo"},
    ]}
    dumps = []
    for name in ("a", "b"):
        runner = ScenarioRunner(tmp_path / name, seed=42)
        populate_home(runner)
        out = runner.run(script)
        dumps.append(out)
    assert dumps[0]["audit_no_wallclock"] == dumps[1]["audit_no_wallclock"]
    assert dumps[0]["audit"] == dumps[1]["audit"]  # virtual time: exact too
    assert dumps[0]["receipts"] == dumps[1]["receipts"]
    assert [e["kind"] for e in dumps[0]["events"]] == \
        [e["kind"] for e in dumps[1]["events"]]
