"""Built-in process function registry.

Apps never run arbitrary code; process nodes refer to this registry by name.
Each function takes (inputs, state, config, now_ms) where ``inputs`` is the
list of upstream values in edge order and ``state`` is a per-node dict that
persists across ticks.
"""

from __future__ import annotations

import math

HOUR_MS = 3600 * 1000
DAY_MS = 24 * HOUR_MS


def _rows(inputs):
    """Flatten upstream row lists (source nodes emit lists of row dicts)."""
    rows = []
    for v in inputs:
        if isinstance(v, list):
            rows.extend(r for r in v if isinstance(r, dict) and "t" in r)
    return rows


def _numeric(row):
    vals = row.get("values") or []
    for v in vals:
        if isinstance(v, bool):
            return 1.0 if v else 0.0
        if isinstance(v, (int, float)):
            return float(v)
    return None


def window_mean(inputs, state, config, now):
    window = config.get("window_ms", HOUR_MS)
    hist = state.setdefault("hist", [])
    for row in _rows(inputs):
        x = _numeric(row)
        if x is not None:
            hist.append((row["t"], x))
    state["hist"] = [(t, x) for t, x in hist if now - t <= window]
    vals = [x for _, x in state["hist"]]
    return sum(vals) / len(vals) if vals else None


def window_sum(inputs, state, config, now):
    window = config.get("window_ms", HOUR_MS)
    hist = state.setdefault("hist", [])
    for row in _rows(inputs):
        x = _numeric(row)
        if x is not None:
            hist.append((row["t"], x))
    state["hist"] = [(t, x) for t, x in hist if now - t <= window]
    return sum(x for _, x in state["hist"])


def threshold(inputs, state, config, now):
    limit = config.get("threshold", 0.0)
    latest = None
    for v in inputs:
        if isinstance(v, list):
            rows = _rows([v])
            if rows:
                latest = _numeric(rows[-1])
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            latest = float(v)
    if latest is None:
        return None
    return latest >= limit


def _logistic(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def occupancy_estimator(inputs, state, config, now):
    """Per-hour occupancy probabilities from an energy stream.

    Squashes normalized per-bucket mean consumption through a logistic:
    ``p = logistic((bucket_mean - baseline) / scale)``. Baseline and scale are
    fit once from the first 24 h of data seen (mean and population std of the
    readings); until then a provisional fit over whatever has arrived is used.
    All outputs are probabilities in [0, 1] by construction.
    """
    buckets = config.get("buckets", 24)
    samples = state.setdefault("samples", [])
    for row in _rows(inputs):
        x = _numeric(row)
        if x is not None:
            samples.append((row["t"], x))
    if not samples:
        return None
    if "baseline" not in state:
        t0 = samples[0][0]
        fit = [x for t, x in samples if t - t0 <= DAY_MS]
        mean = sum(fit) / len(fit)
        var = sum((x - mean) ** 2 for x in fit) / len(fit)
        std = math.sqrt(var)
        if any(t - t0 > DAY_MS for t, _ in samples):
            state["baseline"] = mean
            state["scale"] = std or 1.0
        baseline, scale = mean, std or 1.0
    else:
        baseline, scale = state["baseline"], state["scale"]
    sums = [0.0] * buckets
    counts = [0] * buckets
    for t, x in samples:
        b = (t % DAY_MS) * buckets // DAY_MS
        sums[b] += x
        counts[b] += 1
    matrix = []
    for b in range(buckets):
        if counts[b] == 0:
            matrix.append(0.5)  # no evidence either way
        else:
            matrix.append(_logistic((sums[b] / counts[b] - baseline) / scale))
    return matrix


def weighted_score(inputs, state, config, now):
    """Combine upstream values into one score with per-input weights.

    List inputs (e.g. an occupancy matrix) contribute their mean; row lists
    contribute the mean of their numeric values; booleans count as 0/1.
    Weights default to 1 each and the result is normalized by total weight.
    """
    weights = config.get("weights") or [1.0] * len(inputs)
    total_w = 0.0
    acc = 0.0
    for v, w in zip(inputs, weights):
        x = None
        if isinstance(v, list):
            rows = _rows([v])
            if rows:
                nums = [n for n in (_numeric(r) for r in rows) if n is not None]
                x = sum(nums) / len(nums) if nums else None
            else:
                nums = [float(n) for n in v if isinstance(n, (int, float))]
                x = sum(nums) / len(nums) if nums else None
        elif isinstance(v, bool):
            x = 1.0 if v else 0.0
        elif isinstance(v, (int, float)):
            x = float(v)
        if x is not None:
            acc += w * x
            total_w += w
    return acc / total_w if total_w else None


def passthrough(inputs, state, config, now):
    """Raw pass-through; only loadable when the manifest declares it."""
    rows = _rows(inputs)
    return rows if rows else (inputs[0] if inputs else None)


REGISTRY = {
    "window-mean": window_mean,
    "window-sum": window_sum,
    "threshold": threshold,
    "occupancy-estimator": occupancy_estimator,
    "weighted-score": weighted_score,
    "passthrough": passthrough,
}
