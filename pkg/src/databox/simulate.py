"""Deterministic simulated IoT sources and their drivers.

Generation uses Python's Mersenne Twister (``random.Random``) with explicit
seeding, so the same (profile, seed, duration) always yields a byte-identical
stream. Realism is not a goal; the energy model is base load plus scheduled
appliance pulses plus noise.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import DataboxError, NotFoundError
from .stores import RecordSchema

HOUR_MS = 3600 * 1000
DAY_MS = 24 * HOUR_MS

SCHEMAS = {
    "energy-meter": RecordSchema(fields=(("watts", "real", "W"),)),
    "door-sensor": RecordSchema(fields=(("open", "boolean", ""),)),
    "presence": RecordSchema(fields=(("occupants", "integer", "count"),)),
    "alarm": RecordSchema(fields=(("armed", "boolean", ""),)),
    "microphone-level": RecordSchema(fields=(("level_db", "real", "dB"),)),
    # Actuation targets (bulbs etc.): state log only, no generator.
    "generic": RecordSchema(fields=(("state", "text", ""),)),
}


@dataclass(frozen=True)
class SimProfile:
    kind: str
    seed: int
    cadence_ms: int = 10_000
    params: dict = field(default_factory=dict)
    # energy: base_load_w, appliance_events_per_day, appliance_w
    # door: openings_per_day
    # presence: home_hours (list of [start_h, end_h])
    # alarm: armed_hours (list of [start_h, end_h])
    # microphone-level: ambient_db


def schema_for_kind(kind: str) -> RecordSchema:
    if kind not in SCHEMAS:
        raise DataboxError(f"no simulator for kind {kind!r}", code="UNKNOWN-KIND")
    return SCHEMAS[kind]


def generate(profile: SimProfile, t0: int, duration_ms: int):
    """Yield (timestamp, values) tuples, timestamp-ordered, schema-conformant."""
    if duration_ms <= 0:
        return
    if profile.kind not in SCHEMAS:
        raise DataboxError(f"no simulator for kind {profile.kind!r}", code="UNKNOWN-KIND")
    # str seeding is hash-salt independent, so traces replay across processes
    rng = random.Random(f"{profile.seed}:{profile.kind}")
    p = profile.params
    if profile.kind == "energy-meter":
        base = p.get("base_load_w", 120.0)
        events_per_day = p.get("appliance_events_per_day", 12)
        appliance_w = p.get("appliance_w", 2000.0)
        active_hours = p.get("active_hours", [[6, 9], [17, 23]])
        pulses = _appliance_pulses(profile.seed, t0, duration_ms,
                                   events_per_day, active_hours)
        for t in range(t0, t0 + duration_ms, profile.cadence_ms):
            watts = base + rng.gauss(0, 5.0)
            for start, end in pulses:
                if start <= t < end:
                    watts += appliance_w
            yield t, (round(max(watts, 0.0), 2),)
    elif profile.kind == "door-sensor":
        per_day = p.get("openings_per_day", 20)
        open_until = -1
        for t in range(t0, t0 + duration_ms, profile.cadence_ms):
            if t >= open_until and rng.random() < per_day * profile.cadence_ms / DAY_MS:
                open_until = t + profile.cadence_ms * rng.randint(1, 3)
            yield t, (t < open_until,)
    elif profile.kind == "presence":
        home_hours = p.get("home_hours", [[0, 8], [17, 24]])
        occupants = p.get("occupants", 2)
        for t in range(t0, t0 + duration_ms, profile.cadence_ms):
            hour = (t % DAY_MS) / HOUR_MS
            home = any(a <= hour < b for a, b in home_hours)
            n = occupants if home else 0
            if home and rng.random() < 0.05:
                n = max(0, n - 1)
            yield t, (n,)
    elif profile.kind == "alarm":
        armed_hours = p.get("armed_hours", [[9, 17]])
        for t in range(t0, t0 + duration_ms, profile.cadence_ms):
            hour = (t % DAY_MS) / HOUR_MS
            yield t, (any(a <= hour < b for a, b in armed_hours),)
    elif profile.kind == "microphone-level":
        ambient = p.get("ambient_db", 35.0)
        for t in range(t0, t0 + duration_ms, profile.cadence_ms):
            yield t, (round(ambient + abs(rng.gauss(0, 8.0)), 2),)


def _appliance_pulses(seed, t0, duration_ms, events_per_day, active_hours):
    """Appliance use clusters in the household's waking windows, giving the
    load curve the daily rhythm occupancy inference depends on.

    Pulses are drawn per absolute calendar day with a day-keyed seed, so a
    stream generated in increments matches one generated in a single pass.
    """
    t_end = t0 + duration_ms
    pulses = []
    for day in range(t0 // DAY_MS, t_end // DAY_MS + 1):
        rng = random.Random(f"{seed}:pulses:{day}")
        for _ in range(int(events_per_day)):
            window = active_hours[rng.randrange(len(active_hours))]
            hour_ms = rng.randrange(int(window[0] * HOUR_MS),
                                    int(window[1] * HOUR_MS))
            start = day * DAY_MS + hour_ms
            end = start + rng.randint(2, 20) * 60_000
            if end > t0 and start < t_end:
                pulses.append((start, end))
    return sorted(pulses)


class Driver:
    """Pumps a profile's stream into its store at the profile cadence.

    ``run_until`` advances under whatever clock drives it; the store engine
    serializes the appends and audits each one.
    """

    def __init__(self, profile: SimProfile, store_id: str, stores, start_ms: int):
        self.profile = profile
        self.store_id = store_id
        self.stores = stores
        self.next_t = start_ms
        self.stopped = False
        self.appended = 0

    def run_until(self, now_ms: int) -> int:
        """Append every record due in [next_t, now_ms); returns count appended."""
        if self.stopped or now_ms <= self.next_t:
            return 0
        n = 0
        for t, values in generate(self.profile, self.next_t, now_ms - self.next_t):
            self.stores.append(self.store_id, t, values)
            n += 1
        self.next_t = now_ms
        self.appended += n
        return n

    def stop(self):
        self.stopped = True


class DriverManager:
    """At most one registered driver per source."""

    def __init__(self, stores):
        self.stores = stores
        self.drivers: dict[str, Driver] = {}  # source_id -> driver

    def run_driver(self, profile: SimProfile, source_id: str, start_ms: int) -> Driver:
        store_id = self.stores.store_for_source(source_id)  # raises if missing
        self.stores.register_driver(source_id, f"driver-{source_id}")
        if source_id in self.drivers and not self.drivers[source_id].stopped:
            raise DataboxError(f"source {source_id!r} already has a running driver",
                               code="DRIVER-EXISTS")
        drv = Driver(profile, store_id, self.stores, start_ms)
        self.drivers[source_id] = drv
        return drv

    def run_all_until(self, now_ms: int) -> int:
        return sum(d.run_until(now_ms) for d in self.drivers.values())

    def stop(self, source_id: str):
        if source_id not in self.drivers:
            raise NotFoundError(f"no driver for {source_id!r}")
        self.drivers[source_id].stop()
