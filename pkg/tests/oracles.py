"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written on a different path from the code
under test: pure-python loops instead of numpy, the atan2 great-circle
formulation instead of asin, a hand-rolled canonical serializer, and a
direct per-trip counting loop. Keep it that way; these are the oracles.
"""

import json
import math
import re
from collections import defaultdict
from datetime import date, timedelta

EARTH_RADIUS_M = 6_371_000.0


def haversine_atan2(lat1, lon1, lat2, lon2):
    """Great-circle distance via the atan2 form of the haversine formula."""
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dp = math.radians(lat2 - lat1)
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return EARTH_RADIUS_M * 2 * math.atan2(math.sqrt(a), math.sqrt(1 - a))


def brute_force_daily_counts(trips, center_lat, center_lon, radius_m, start, end):
    """Count in-radius pickups/dropoffs per day with a plain loop.

    ``trips`` is a sequence of (pickup_dt, dropoff_dt, plat, plon, dlat, dlon).
    Returns {date: [outflow, inflow]} densely over [start, end].
    """
    counts = {}
    d = start
    while d <= end:
        counts[d] = [0, 0]
        d += timedelta(days=1)
    for pickup_dt, dropoff_dt, plat, plon, dlat, dlon in trips:
        pd = pickup_dt.date()
        dd = dropoff_dt.date()
        if pd in counts and haversine_atan2(plat, plon, center_lat, center_lon) <= radius_m:
            counts[pd][0] += 1
        if dd in counts and haversine_atan2(dlat, dlon, center_lat, center_lon) <= radius_m:
            counts[dd][1] += 1
    return counts


def metrics_brute_force(y_true, y_pred):
    """RMSE/MAE/MAPE/R^2 with explicit loops; MAPE skips zero-true terms."""
    n = len(y_true)
    assert n == len(y_pred) and n > 0
    sse = 0.0
    sae = 0.0
    for t, p in zip(y_true, y_pred):
        sse += (t - p) ** 2
        sae += abs(t - p)
    rmse = math.sqrt(sse / n)
    mae = sae / n
    mape_terms = []
    for t, p in zip(y_true, y_pred):
        if t != 0:
            mape_terms.append(abs(t - p) / abs(t))
    mape = sum(mape_terms) / len(mape_terms) if mape_terms else None
    mean_t = sum(y_true) / n
    sst = sum((t - mean_t) ** 2 for t in y_true)
    if sst == 0:
        r2 = 1.0 if sse == 0 else None
    else:
        r2 = 1.0 - sse / sst
    return {"rmse": rmse, "mae": mae, "mape": mape, "r2": r2,
            "mape_excluded": n - len(mape_terms)}


def canonical_digest(model, temperature, messages, max_tokens):
    """Independent canonical serialization + SHA-256, built by hand.

    Messages are (role, content) pairs. Field order is fixed; max_tokens is
    omitted when absent; strings are JSON-escaped with ASCII-only output.
    """
    import hashlib

    def esc(s):
        return json.dumps(s, ensure_ascii=True)

    parts = ['{"model":' + esc(model), '"temperature":' + json.dumps(temperature)]
    msg_parts = []
    for role, content in messages:
        msg_parts.append('{"role":' + esc(role) + ',"content":' + esc(content) + "}")
    parts.append('"messages":[' + ",".join(msg_parts) + "]")
    if max_tokens is not None:
        parts.append('"max_tokens":' + json.dumps(max_tokens))
    blob = ",".join(parts) + "}"
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def ols_two_points(x0, y0, x1, y1):
    """Exact line through two points: (slope, intercept)."""
    slope = (y1 - y0) / (x1 - x0)
    return slope, y0 - slope * x0


def ridge_1d(xs, ys, lam):
    """Hand normal equations for one feature with unpenalized intercept."""
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    w = sxy / (sxx + lam)
    return w, my - w * mx


def best_stump_variance_gain(xs, ys):
    """Exhaustive depth-1 split by SSE over midpoint thresholds (1 feature)."""
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    xs = [xs[i] for i in order]
    ys = [ys[i] for i in order]
    best = None
    for i in range(len(xs) - 1):
        if xs[i] == xs[i + 1]:
            continue
        thr = (xs[i] + xs[i + 1]) / 2
        left = [y for x, y in zip(xs, ys) if x <= thr]
        right = [y for x, y in zip(xs, ys) if x > thr]
        lm = sum(left) / len(left)
        rm = sum(right) / len(right)
        sse = sum((y - lm) ** 2 for y in left) + sum((y - rm) ** 2 for y in right)
        if best is None or sse < best[0]:
            best = (sse, thr, lm, rm)
    return best


def whitespace_word_count(text):
    """Token count on whitespace via regex, independent of str.split."""
    if text is None:
        return 0
    return len(re.findall(r"\S+", text))


FORMATTED_REPLY_RE = re.compile(
    r"\[\s*category\s*\](?P<cat>.*?)\[\s*summary\s*\](?P<summ>.*)",
    re.IGNORECASE | re.DOTALL,
)


def parse_formatted_reply_regex(reply):
    """Single-regex reference parser for `[Category] ... [Summary] ...`."""
    m = FORMATTED_REPLY_RE.search(reply)
    if not m:
        return None
    cat = m.group("cat").strip()
    summ = m.group("summ").strip()
    if not cat or not summ:
        return None
    return cat, summ


def word_tokens(text):
    """Lowercase alphanumeric word tokens; the prompt-property tokenizer."""
    return set(re.findall(r"[a-z0-9']+", text.lower()))


def planted_effect_bounds(truth_rows):
    """Achievable event-day MAE with and without event knowledge, by brute force.

    ``truth_rows`` is the synthetic generator's ground truth: a list of
    (date, outflow, inflow, base_out, base_in, categories) where categories
    is a tuple of planted category names (empty on non-event days).

    Returns (mae_blind, mae_informed) over pooled out/in samples on event
    days of the second half: blind predicts the planted weekday base,
    informed adds the category-mean effect estimated from the first half.
    """
    half = len(truth_rows) // 2
    train, test = truth_rows[:half], truth_rows[half:]

    effect_sums = defaultdict(lambda: [0.0, 0.0, 0])
    for _, out, inn, bout, binn, cats in train:
        if len(cats) == 1:
            acc = effect_sums[cats[0]]
            acc[0] += out - bout
            acc[1] += inn - binn
            acc[2] += 1
    effects = {c: (s[0] / s[2], s[1] / s[2]) for c, s in effect_sums.items() if s[2] > 0}

    blind_err = []
    informed_err = []
    for _, out, inn, bout, binn, cats in test:
        if not cats:
            continue
        blind_err += [abs(out - bout), abs(inn - binn)]
        eo = sum(effects.get(c, (0.0, 0.0))[0] for c in cats)
        ei = sum(effects.get(c, (0.0, 0.0))[1] for c in cats)
        informed_err += [abs(out - (bout + eo)), abs(inn - (binn + ei))]
    mae_blind = sum(blind_err) / len(blind_err)
    mae_informed = sum(informed_err) / len(informed_err)
    return mae_blind, mae_informed
