"""Quadruple datasets: parsing, vocabularies, calendar decomposition,
inverse augmentation, negative sampling and filtered-evaluation indexes.

Dataset files are UTF-8 TSV with four columns (subject, relation, object,
timestamp), one fact per line. Timestamps are "YYYY-MM-DD" for day
granularity or a bare year for year granularity.
"""

import os
import re
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IntegrityError, ParseError

_DAY_RE = re.compile(r"^(\d{4})-(\d{1,2})-(\d{1,2})$")
_YEAR_RE = re.compile(r"^(-?\d{1,5})$")

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class Quadruple:
    s: int
    r: int
    o: int
    t: int
    inverse: bool = False


@dataclass(frozen=True)
class TimeTriple:
    year_idx: int
    month_idx: int
    day_idx: int


class StringIndex:
    """Bijective string<->index map; indexes follow insertion order."""

    def __init__(self, strings=()):
        self.strings = []
        self.to_idx = {}
        for s in strings:
            self.add(s)

    def add(self, s):
        if s not in self.to_idx:
            self.to_idx[s] = len(self.strings)
            self.strings.append(s)
        return self.to_idx[s]

    def index(self, s):
        return self.to_idx[s]

    def string(self, i):
        return self.strings[i]

    def __len__(self):
        return len(self.strings)

    def __contains__(self, s):
        return s in self.to_idx


@dataclass
class Vocabulary:
    entity: StringIndex
    relation: StringIndex
    timestamp: StringIndex
    year: StringIndex
    month: StringIndex
    day: StringIndex
    timestamp_order: list  # timestamp indices, chronologically sorted


@dataclass
class Dataset:
    train: list
    valid: list
    test: list
    vocab: Vocabulary
    time_triples: list  # indexed by timestamp index
    granularity: str

    @property
    def num_entities(self):
        return len(self.vocab.entity)

    @property
    def num_relations(self):
        return len(self.vocab.relation)

    @property
    def num_timestamps(self):
        return len(self.vocab.timestamp)

    def split(self, name):
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)


def parse_timestamp(text, granularity):
    """Return (year, month, day) ints; month/day are 0 for year granularity."""
    if granularity == "day":
        m = _DAY_RE.match(text)
        if m:
            y, mo, dy = (int(g) for g in m.groups())
            if 1 <= mo <= 12 and 1 <= dy <= 31:
                return y, mo, dy
        return None
    if granularity == "year":
        m = _YEAR_RE.match(text)
        return (int(m.group(1)), 0, 0) if m else None
    raise ConfigError(f"unknown granularity {granularity!r}; expected 'day' or 'year'")


def _read_split(path, granularity):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 tab-separated columns, "
                                 f"got {len(cols)}")
            if parse_timestamp(cols[3], granularity) is None:
                raise ParseError(f"{path}:{lineno}: malformed timestamp {cols[3]!r} "
                                 f"for granularity {granularity!r}")
            rows.append(tuple(cols))
    return rows


def load_dataset(path, granularity="day"):
    """Load train/valid/test TSV files and build all vocabularies.

    Vocabularies cover the union of the three splits (the task is
    transductive). Timestamp indices are assigned in chronological order.
    """
    raw = {}
    for split in SPLITS:
        fname = os.path.join(path, f"{split}.txt")
        if not os.path.exists(fname):
            raise FileNotFoundError(f"missing dataset split file: {fname}")
        raw[split] = _read_split(fname, granularity)

    entity, relation = StringIndex(), StringIndex()
    ts_key = {}
    for split in SPLITS:
        for s, r, o, ts in raw[split]:
            entity.add(s)
            entity.add(o)
            relation.add(r)
            if ts not in ts_key:
                ts_key[ts] = parse_timestamp(ts, granularity)

    timestamp = StringIndex(sorted(ts_key, key=lambda ts: ts_key[ts]))
    year = StringIndex(sorted({f"{y}" for y, _, _ in ts_key.values()},
                              key=int))
    if granularity == "day":
        month = StringIndex(sorted({f"{mo:02d}" for _, mo, _ in ts_key.values()}))
        day = StringIndex(sorted({f"{dy:02d}" for _, _, dy in ts_key.values()}))
    else:
        # Year-only data gets a single fabricated constant for month and day.
        month, day = StringIndex(["0"]), StringIndex(["0"])

    time_triples = []
    for i in range(len(timestamp)):
        y, mo, dy = ts_key[timestamp.string(i)]
        if granularity == "day":
            time_triples.append(TimeTriple(year.index(f"{y}"),
                                           month.index(f"{mo:02d}"),
                                           day.index(f"{dy:02d}")))
        else:
            time_triples.append(TimeTriple(year.index(f"{y}"), 0, 0))

    vocab = Vocabulary(entity, relation, timestamp, year, month, day,
                       timestamp_order=list(range(len(timestamp))))

    def to_quads(rows):
        return [Quadruple(entity.index(s), relation.index(r),
                          entity.index(o), timestamp.index(ts))
                for s, r, o, ts in rows]

    return Dataset(train=to_quads(raw["train"]), valid=to_quads(raw["valid"]),
                   test=to_quads(raw["test"]), vocab=vocab,
                   time_triples=time_triples, granularity=granularity)


def add_inverse(quads, num_relations):
    """Append the reversed form (o, r+|R|, s, t) of every fact; size doubles."""
    out = []
    for q in quads:
        if q.r >= num_relations or q.inverse:
            raise IntegrityError(
                f"relation index {q.r} >= |R|={num_relations}: input already augmented")
        out.append(q)
    for q in quads:
        out.append(Quadruple(q.o, q.r + num_relations, q.s, q.t, inverse=True))
    return out


def sample_negatives(quad, n, rng, num_entities):
    """n distinct entities drawn uniformly from E minus the gold object."""
    if n >= num_entities:
        raise ConfigError(f"cannot sample {n} negatives from {num_entities} entities "
                          "(need n < |E|)")
    draws = rng.choice(num_entities - 1, size=n, replace=False)
    return draws + (draws >= quad.o)


@dataclass
class FilterIndex:
    """Known-true objects per query, for filtered ranking.

    time_aware maps (s, r, t) -> set of objects true at that timestamp;
    static maps (s, r) -> set of objects true at any time. Both are built
    over train+valid+test so evaluation never ranks the gold against other
    correct answers."""
    time_aware: dict = field(default_factory=lambda: defaultdict(set))
    static: dict = field(default_factory=lambda: defaultdict(set))


def build_filter_index(*quad_lists):
    index = FilterIndex()
    for quads in quad_lists:
        for q in quads:
            index.time_aware[(q.s, q.r, q.t)].add(q.o)
            index.static[(q.s, q.r)].add(q.o)
    return index


def time_index_arrays(dataset, quads):
    """Column arrays (s, r, o, year_idx, month_idx, day_idx) for a quad batch."""
    s = np.fromiter((q.s for q in quads), dtype=np.int64, count=len(quads))
    r = np.fromiter((q.r for q in quads), dtype=np.int64, count=len(quads))
    o = np.fromiter((q.o for q in quads), dtype=np.int64, count=len(quads))
    tt = dataset.time_triples
    y = np.fromiter((tt[q.t].year_idx for q in quads), dtype=np.int64, count=len(quads))
    mo = np.fromiter((tt[q.t].month_idx for q in quads), dtype=np.int64, count=len(quads))
    dy = np.fromiter((tt[q.t].day_idx for q in quads), dtype=np.int64, count=len(quads))
    return s, r, o, y, mo, dy
