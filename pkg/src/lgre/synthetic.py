"""Synthetic temporal-KG generator with planted calendar-periodic rules.

A rule pins one (subject, relation) pair to a fixed object whenever the
timestamp matches a mask on one calendar granularity, e.g. "month == 3" or
"year % 2 == 0". Datasets built this way have a known ground truth, so a
model that claims to exploit a granularity can be checked against it.

Spec files are flat key=value text with one `rule=` line per rule:

    entities=40
    relations=4
    facts=2000
    year_start=2014
    year_end=2015
    unruled_fraction=0.0
    rule=e0|r0|month|==3|e7
    rule=e1|r1|year|%2==0|e2
"""

import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GenerationError, ParseError

_MASK_RE = re.compile(r"^(?:==(-?\d+)|%(\d+)==(\d+))$")
GRANULARITIES = ("year", "month", "day")


@dataclass(frozen=True)
class Rule:
    subject: str
    relation: str
    granularity: str
    mask: str
    obj: str

    def matches(self, year, month, day):
        value = {"year": year, "month": month, "day": day}[self.granularity]
        m = _MASK_RE.match(self.mask)
        if m is None:
            raise ConfigError(f"bad rule mask {self.mask!r}; use '==V' or '%M==V'")
        if m.group(1) is not None:
            return value == int(m.group(1))
        return value % int(m.group(2)) == int(m.group(3))

    def as_line(self):
        return "\t".join((self.subject, self.relation, self.granularity,
                          self.mask, self.obj))


@dataclass
class SyntheticSpec:
    entities: int
    relations: int
    facts: int
    year_start: int
    year_end: int
    granularity: str = "day"
    unruled_fraction: float = 0.0
    rules: list = field(default_factory=list)

    def validate(self):
        if self.entities < 2 or self.relations < 1 or self.facts < 1:
            raise ConfigError("synthetic spec needs >=2 entities, >=1 relation, >=1 fact")
        if self.year_end < self.year_start:
            raise ConfigError("year_end must be >= year_start")
        if not 0.0 <= self.unruled_fraction <= 1.0:
            raise ConfigError("unruled_fraction must be in [0, 1]")
        for rule in self.rules:
            if rule.granularity not in GRANULARITIES:
                raise ConfigError(f"bad rule granularity {rule.granularity!r}")
            rule.matches(self.year_start, 1, 1)  # mask syntax check


def load_spec(path):
    spec_kwargs = {}
    rules = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "rule":
                parts = value.split("|")
                if len(parts) != 5:
                    raise ParseError(f"{path}:{lineno}: rule needs 5 |-separated fields")
                rules.append(Rule(*parts))
            elif key in ("entities", "relations", "facts", "year_start", "year_end"):
                spec_kwargs[key] = int(value)
            elif key == "unruled_fraction":
                spec_kwargs[key] = float(value)
            elif key == "granularity":
                spec_kwargs[key] = value
            else:
                raise ParseError(f"{path}:{lineno}: unknown spec key {key!r}")
    missing = {"entities", "relations", "facts", "year_start", "year_end"} - set(spec_kwargs)
    if missing:
        raise ParseError(f"{path}: missing spec keys: {sorted(missing)}")
    spec = SyntheticSpec(rules=rules, **spec_kwargs)
    spec.validate()
    return spec


def _calendar(spec):
    """All dates in the span; days capped at 28 so every month is uniform."""
    years = range(spec.year_start, spec.year_end + 1)
    if spec.granularity == "year":
        return [(y, 0, 0) for y in years]
    return [(y, mo, dy) for y in years for mo in range(1, 13) for dy in range(1, 29)]


def _ts_string(date, granularity):
    y, mo, dy = date
    return f"{y}" if granularity == "year" else f"{y:04d}-{mo:02d}-{dy:02d}"


def _check_consistency(rules_by_pair, calendar):
    for pair, rules in rules_by_pair.items():
        for date in calendar:
            hits = [r for r in rules if r.matches(*date)]
            objs = {r.obj for r in hits}
            if len(objs) > 1:
                a, b = hits[0], next(r for r in hits if r.obj != hits[0].obj)
                raise GenerationError(
                    f"contradictory rules for {pair} at {date}: "
                    f"[{a.as_line()}] vs [{b.as_line()}]")


def generate_synthetic(spec, seed):
    """Sample `spec.facts` distinct quadruples consistent with the rules.

    Returns (rows, rules) where rows are (s, r, o, ts) string tuples in a
    deterministic shuffled order, ready to be split 80/10/10.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    calendar = _calendar(spec)
    ent = [f"e{i}" for i in range(spec.entities)]
    rel = [f"r{i}" for i in range(spec.relations)]

    rules_by_pair = {}
    for rule in spec.rules:
        rules_by_pair.setdefault((rule.subject, rule.relation), []).append(rule)
    _check_consistency(rules_by_pair, calendar)

    # Each matching date of a ruled pair yields exactly one distinct quad, so
    # the ruled space can be enumerated and sampled without replacement.
    ruled_space = []
    for pair, rules in rules_by_pair.items():
        matched = False
        for date in calendar:
            hit = next((r for r in rules if r.matches(*date)), None)
            if hit is not None:
                matched = True
                ruled_space.append(pair + (hit.obj, _ts_string(date, spec.granularity)))
        if not matched:
            raise GenerationError(f"rules for {pair} match no date in the span")

    n_unruled = int(round(spec.facts * spec.unruled_fraction)) if rules_by_pair \
        else spec.facts
    n_ruled = min(spec.facts - n_unruled, len(ruled_space))
    n_unruled = spec.facts - n_ruled  # ruled overflow falls back to random facts

    rows = []
    if n_ruled:
        picks = rng.choice(len(ruled_space), size=n_ruled, replace=False)
        rows.extend(ruled_space[i] for i in picks)

    seen = set(rows)
    attempts = 0
    max_attempts = 200 * spec.facts + 1000
    while len(rows) < spec.facts:
        attempts += 1
        if attempts > max_attempts:
            raise GenerationError(
                f"could not generate {spec.facts} distinct facts (got {len(rows)}); "
                "the spec space is too small")
        s = ent[rng.integers(spec.entities)]
        r = rel[rng.integers(spec.relations)]
        if (s, r) in rules_by_pair:
            continue  # random facts must not touch rule-governed pairs
        obj = ent[rng.integers(spec.entities)]
        date = calendar[rng.integers(len(calendar))]
        row = (s, r, obj, _ts_string(date, spec.granularity))
        if row in seen:
            continue
        seen.add(row)
        rows.append(row)

    order = rng.permutation(len(rows))
    return [rows[i] for i in order], list(spec.rules)


def split_rows(rows):
    """80/10/10 partition (counts rounded, so each is within one of exact)."""
    n = len(rows)
    n_train = int(round(0.8 * n))
    n_valid = int(round(0.1 * n))
    return rows[:n_train], rows[n_train:n_train + n_valid], rows[n_train + n_valid:]


def write_dataset(out_dir, rows, rules):
    """Write train/valid/test TSVs plus the ground-truth rules file."""
    os.makedirs(out_dir, exist_ok=True)
    train, valid, test = split_rows(rows)
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        with open(os.path.join(out_dir, f"{name}.txt"), "w", encoding="utf-8") as fh:
            for row in part:
                fh.write("\t".join(row) + "\n")
    with open(os.path.join(out_dir, "rules.txt"), "w", encoding="utf-8") as fh:
        for rule in rules:
            fh.write(rule.as_line() + "\n")
    return out_dir
