import pytest

from databox.platform import Platform


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in getattr(rep, "nodeid", ""):
                continue
            name = rep.nodeid.split("::")[-1]
            verdict = "PASS" if outcome == "passed" else "FAIL"
            lines.append(f"ACCEPTANCE {verdict}: {name}")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
from databox.scenario import ScenarioRunner

HOUR = 3600 * 1000
DAY = 24 * HOUR

SOURCES = [
    ("energy-meter", "mains", "energy-1", 7),
    ("door-sensor", "front", "door-1", 8),
    ("alarm", "panel", "alarm-1", 9),
    ("presence", "hall", "presence-1", 10),
]


def make_platform(tmp_path, seed=42, name="box"):
    return Platform(tmp_path / name, seed=seed)


def populate_home(runner: ScenarioRunner, cadence_ms=60_000):
    """Owner account + the four standard sources with running drivers."""
    steps = [{"op": "create-account", "name": "Alice", "role": "owner",
              "alias": "alice"}]
    for kind, label, sid, seed in SOURCES:
        steps.append({"op": "add-source", "kind": kind, "label": label,
                      "owners": ["alice"], "source_id": sid})
        steps.append({"op": "start-driver", "source_id": sid, "seed": seed,
                      "cadence_ms": cadence_ms if kind == "energy-meter"
                      else 10 * cadence_ms})
    runner.run({"steps": steps})
    return runner.aliases["alice"]


@pytest.fixture
def platform(tmp_path):
    return make_platform(tmp_path)


@pytest.fixture
def runner(tmp_path):
    return ScenarioRunner(tmp_path / "box", seed=42)


@pytest.fixture
def home(runner):
    """(runner, owner user id) with sources and drivers ready."""
    user = populate_home(runner)
    return runner, user


def simple_manifest(app_id="test-app", off_box=False, **overrides):
    doc = {
        "app_id": app_id,
        "short": {
            "purpose": "test processing",
            "sources": [
                {"kind": "energy-meter", "actions": ["query"],
                 "sample_periods_ms": [60_000, 600_000]},
            ],
            "off_box": off_box,
            "online_access_url": None,
        },
        "condensed": {
            "controller": "Test Co",
            "purposes": "testing",
            "legal_basis": "consent",
            "retention": "7 days",
            "rights": "access, rectification, erasure",
            "withdrawal": "withdraw at any time from the dashboard",
            "recipients": ["Test Co"] if off_box else [],
            "recipient_countries": ["GB"] if off_box else [],
            "outside_eu": False,
        },
        "legal": {"terms": "full legal terms text"},
    }
    if off_box:
        doc["short"]["report_periods_ms"] = [HOUR, DAY]
    for key, value in overrides.items():
        layer, _, field = key.partition("__")
        if field:
            doc[layer][field] = value
        else:
            doc[layer] = value
    return doc


def simple_flow(app_id="test-app", with_export=False):
    nodes = [
        {"id": "energy", "kind": "source", "source_kind": "energy-meter"},
        {"id": "mean", "kind": "process", "function": "window-mean",
         "params": {"window_ms": HOUR}},
        {"id": "viz", "kind": "output", "output": "visualisation"},
    ]
    edges = [["energy", "mean"], ["mean", "viz"]]
    if with_export:
        nodes.append({"id": "up", "kind": "output", "output": "export",
                      "params": {"recipient": "test-cloud"}})
        edges.append(["mean", "up"])
    return {"app_id": app_id, "nodes": nodes, "edges": edges}


def simple_choices(store_id="store-energy-1", period=60_000, report=HOUR,
                   off_box=False, preview=True):
    choices = {
        "sources": {"energy-meter": {"selected": True, "store_id": store_id,
                                     "sample_period_ms": period}},
        "preview": preview,
    }
    if off_box:
        choices["report_period_ms"] = report
    return choices
