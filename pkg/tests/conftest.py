import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import numpy as np
import pytest

from lgre.data import Dataset, Quadruple, StringIndex, TimeTriple, Vocabulary


def make_dataset(train, valid=(), test=(), num_entities=None, num_relations=None,
                 timestamps=None, granularity="day"):
    """Assemble an in-memory Dataset from integer quadruple tuples.

    timestamps: list of (year, month, day) per timestamp index; defaults to
    consecutive days of one month."""
    quads = {name: [Quadruple(*q) for q in rows]
             for name, rows in (("train", train), ("valid", valid), ("test", test))}
    all_q = quads["train"] + quads["valid"] + quads["test"]
    n_e = num_entities or (max(max(q.s, q.o) for q in all_q) + 1)
    n_r = num_relations or (max(q.r for q in all_q) + 1)
    n_t = (max(q.t for q in all_q) + 1) if timestamps is None else len(timestamps)
    if timestamps is None:
        timestamps = [(2014, 1, i + 1) for i in range(n_t)]
    years = sorted({y for y, _, _ in timestamps})
    months = sorted({m for _, m, _ in timestamps})
    days = sorted({d for _, _, d in timestamps})
    vocab = Vocabulary(
        entity=StringIndex([f"e{i}" for i in range(n_e)]),
        relation=StringIndex([f"r{i}" for i in range(n_r)]),
        timestamp=StringIndex([f"{y:04d}-{m:02d}-{d:02d}" for y, m, d in timestamps]),
        year=StringIndex([f"{y}" for y in years]),
        month=StringIndex([f"{m:02d}" for m in months]),
        day=StringIndex([f"{d:02d}" for d in days]),
        timestamp_order=sorted(range(len(timestamps)), key=lambda i: timestamps[i]),
    )
    triples = [TimeTriple(years.index(y), months.index(m), days.index(d))
               for y, m, d in timestamps]
    return Dataset(train=quads["train"], valid=quads["valid"], test=quads["test"],
                   vocab=vocab, time_triples=triples, granularity=granularity)


@pytest.fixture
def tiny_dataset():
    """3 entities, 2 relations, 4 timestamps; enough to drive the full model."""
    train = [(0, 0, 1, 0), (1, 1, 2, 1), (2, 0, 0, 2), (0, 1, 2, 3),
             (1, 0, 2, 0), (2, 1, 1, 3)]
    valid = [(0, 0, 2, 1)]
    test = [(1, 1, 0, 2)]
    return make_dataset(train, valid, test, num_entities=3, num_relations=2,
                        timestamps=[(2014, 1, 1), (2014, 1, 15), (2014, 2, 1),
                                    (2015, 2, 10)])


@pytest.fixture(autouse=True)
def reset_precision():
    from lgre import autodiff
    yield
    autodiff.set_precision("f64")
