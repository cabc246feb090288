"""Training loop, filtered-ranking evaluation, frequency baseline, AGB
weight export and the step-time benchmark."""

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as M
from .checkpoint import save_checkpoint
from .data import Quadruple, add_inverse, build_filter_index, sample_negatives, \
    time_index_arrays
from .errors import ConfigError, DivergenceError
from .losses import combine, main_loss, temporal_loss
from .optim import Adam

HITS_LEVELS = (1, 3, 10)


@dataclass
class RankReport:
    ranks: list
    directions: list  # "object" / "subject", parallel to ranks
    mrr: float = 0.0
    hits1: float = 0.0
    hits3: float = 0.0
    hits10: float = 0.0
    count: int = 0
    by_direction: dict = field(default_factory=dict)

    @classmethod
    def from_ranks(cls, ranks, directions):
        ranks = [int(r) for r in ranks]
        report = cls(ranks=ranks, directions=list(directions))
        report.count = len(ranks)
        report.mrr, report.hits1, report.hits3, report.hits10 = _metrics(ranks)
        for direction in ("object", "subject"):
            sub = [r for r, d in zip(ranks, directions) if d == direction]
            if sub:
                mrr, h1, h3, h10 = _metrics(sub)
                report.by_direction[direction] = {
                    "count": len(sub), "mrr": mrr, "hits1": h1, "hits3": h3,
                    "hits10": h10}
        return report

    def to_dict(self, include_ranks=False):
        out = {"count": self.count, "mrr": self.mrr, "hits1": self.hits1,
               "hits3": self.hits3, "hits10": self.hits10,
               "by_direction": self.by_direction}
        if include_ranks:
            out["ranks"] = self.ranks
            out["directions"] = self.directions
        return out


def _metrics(ranks):
    arr = np.asarray(ranks, dtype=np.float64)
    mrr = float((1.0 / arr).mean())
    return (mrr,) + tuple(float((arr <= k).mean()) for k in HITS_LEVELS)


def _batch_arrays(dataset, quads):
    s, r, o, y, mo, dy = time_index_arrays(dataset, quads)
    return s, r, o, y, mo, dy


def _forward(params, cfg, dataset, quads, training, rng):
    s, r, _, y, mo, dy = _batch_arrays(dataset, quads)
    return M.forward_queries(
        params, s, r, y, mo, dy, no_ru=cfg.no_ru, no_agb=cfg.no_agb,
        dropout_rate=cfg.dropout, training=training, rng=rng,
        input_dropout=cfg.input_dropout)


def _trainable(params, cfg, use_temporal):
    """Parameters that participate in the graph under the active ablations.

    Bypassed groups (relation fusion under no_ru, gates under no_agb, the
    time projection when neither the fusion nor the regularizer uses it)
    must not be registered, or the optimizer would see missing gradients."""
    named = params.named()
    if cfg.no_ru:
        named.pop("rel_proj_w")
        named.pop("rel_proj_b")
        if not use_temporal:
            named.pop("time_proj_w")
            named.pop("time_proj_b")
    if cfg.no_agb:
        named.pop("gate_year")
        named.pop("gate_month")
        named.pop("gate_day")
    return named


@dataclass
class TrainResult:
    params: object            # parameters after the final epoch
    best_params: object       # parameters at the best validation MRR
    records: list             # one dict per epoch: epoch/main/temporal/total/val_mrr
    best_val_mrr: float


def train(cfg, dataset, run_dir=None, quiet=True):
    """Mini-batch training with negative sampling.

    Per step: encoder forward, scoring of gold + n sampled negatives, BCE
    plus the temporal regularizer, Adam update. Validation MRR is computed
    every cfg.val_every epochs; the best-validation parameters are retained
    (and written under run_dir when given). A non-finite loss aborts with
    DivergenceError after persisting the last epoch-start snapshot.
    """
    cfg.validate()
    ad.set_precision(cfg.precision)
    if cfg.negatives >= dataset.num_entities:
        raise ConfigError(
            f"negatives={cfg.negatives} needs more entities than {dataset.num_entities}")

    ss = np.random.SeedSequence(cfg.seed)
    init_seed, shuffle_ss, neg_ss, drop_ss = ss.spawn(4)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    neg_rng = np.random.default_rng(neg_ss)
    drop_rng = np.random.default_rng(drop_ss)

    vocab = dataset.vocab
    params = M.ModelParams.init(
        dataset.num_entities, dataset.num_relations, len(vocab.year),
        len(vocab.month), len(vocab.day), dim=cfg.dim, channels=cfg.channels,
        kernel=cfg.kernel, seed=init_seed)
    train_quads = add_inverse(dataset.train, dataset.num_relations)
    use_temporal = (not cfg.no_tl) and cfg.alpha > 0 and dataset.num_timestamps >= 2
    optimizer = Adam(_trainable(params, cfg, use_temporal), lr=cfg.lr)

    vocab_sizes = {"entity": dataset.num_entities, "relation": dataset.num_relations,
                   "timestamp": dataset.num_timestamps, "year": len(vocab.year),
                   "month": len(vocab.month), "day": len(vocab.day)}
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        log_fh = open(os.path.join(run_dir, "epochs.jsonl"), "w", encoding="utf-8")
    else:
        log_fh = None

    def persist(tag, source):
        if run_dir:
            save_checkpoint(os.path.join(run_dir, tag), source, cfg, vocab_sizes)

    records = []
    best_val = -math.inf
    best_params = params.copy()
    epochs_since_best = 0
    persist("checkpoint", best_params)  # epochs=0 still yields a checkpoint

    try:
        for epoch in range(cfg.epochs):
            snapshot = params.copy()
            order = shuffle_rng.permutation(len(train_quads))
            main_sum = temp_sum = total_sum = 0.0
            steps = 0
            for start in range(0, len(train_quads), cfg.batch_size):
                batch = [train_quads[i] for i in order[start:start + cfg.batch_size]]
                negs = np.stack([
                    sample_negatives(q, cfg.negatives, neg_rng, dataset.num_entities)
                    for q in batch])
                x_out, _, _ = _forward(params, cfg, dataset, batch, True, drop_rng)
                gold = np.array([q.o for q in batch], dtype=np.int64)
                cand = np.concatenate([gold[:, None], negs], axis=1)
                _, probs = M.score_candidates(x_out, params.entity, cand)
                gold_col = np.zeros(len(batch), dtype=np.int64)
                neg_cols = np.tile(np.arange(1, cfg.negatives + 1), (len(batch), 1))
                main = main_loss(probs, gold_col, neg_cols, cfg.neg_weighting)
                if use_temporal:
                    temp = temporal_loss(M.compose_time_table(params, dataset),
                                         cfg.temporal_mode)
                    total = main + cfg.alpha * temp
                    temp_val = temp.item()
                else:
                    total = main
                    temp_val = 0.0
                if not np.isfinite(total.item()):
                    persist("checkpoint.last_good", snapshot)
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch} step {steps}: "
                        f"main={main.item()}, temporal={temp_val}; "
                        "last good parameters were persisted")
                total.backward()
                optimizer.step()
                main_sum += main.item()
                temp_sum += temp_val
                total_sum += total.item()
                steps += 1

            breakdown = combine(main_sum / steps, temp_sum / steps,
                                cfg.alpha if use_temporal else 0.0)
            val_mrr = None
            if dataset.valid and cfg.val_every and (epoch + 1) % cfg.val_every == 0:
                val_mrr = evaluate(params, cfg, dataset, "valid",
                                   filter_mode=cfg.eval_filter,
                                   workers=cfg.eval_workers).mrr
                if val_mrr > best_val:
                    best_val = val_mrr
                    best_params = params.copy()
                    epochs_since_best = 0
                    persist("checkpoint", best_params)
                else:
                    epochs_since_best += 1
            record = {"epoch": epoch, "main": breakdown.main,
                      "temporal": breakdown.temporal,
                      "total": breakdown.total, "val_mrr": val_mrr}
            records.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if not quiet:
                print(f"epoch {epoch}: total={record['total']:.4f} "
                      f"val_mrr={val_mrr}", flush=True)
            if val_mrr is not None and epochs_since_best >= cfg.patience:
                break
    finally:
        if log_fh:
            log_fh.close()

    if best_val == -math.inf:  # no validation happened; keep final parameters
        best_params = params.copy()
        persist("checkpoint", best_params)
    return TrainResult(params=params, best_params=best_params, records=records,
                       best_val_mrr=(best_val if best_val != -math.inf else float("nan")))


# -- evaluation ---------------------------------------------------------------

def _rank_one(scores, gold, filtered):
    """Pessimistic rank: gold is placed after every tied competitor."""
    gold_score = scores[gold]
    mask = np.ones(scores.shape[0], dtype=bool)
    if filtered:
        mask[list(filtered)] = False
    mask[gold] = False
    return 1 + int(np.count_nonzero(scores[mask] >= gold_score))


def _filter_set(filter_index, mode, s, r, t):
    if mode == "raw" or filter_index is None:
        return ()
    if mode == "static":
        return filter_index.static.get((s, r), ())
    if mode == "time_aware":
        return filter_index.time_aware.get((s, r, t), ())
    raise ConfigError(f"unknown filter mode {mode!r}")


def _query_list(dataset, split):
    """Both directions for every fact: (s, r, gold, t, direction)."""
    queries = []
    for q in dataset.split(split):
        queries.append((q.s, q.r, q.o, q.t, "object"))
        queries.append((q.o, q.r + dataset.num_relations, q.s, q.t, "subject"))
    return queries


def _score_chunk(params, cfg, dataset, chunk):
    quads = [Quadruple(s, r, gold, t, inverse=r >= dataset.num_relations)
             for s, r, gold, t, _ in chunk]
    with ad.no_grad():
        x_out, _, _ = _forward(params, cfg, dataset, quads, False, None)
        logits, _ = M.score_all(x_out, params.entity)
    return logits.data


def evaluate(params, cfg, dataset, split="test", filter_mode=None, workers=1,
             chunk_size=1024):
    """Filtered ranking over both query directions of a split.

    For every query the gold entity is ranked against all entities except the
    other known-true answers for the active filter mode; ties count against
    the gold. Queries are scored in chunks, optionally across threads over
    the read-only parameters, and merged back in query order.
    """
    filter_mode = filter_mode or cfg.eval_filter
    queries = _query_list(dataset, split)
    if filter_mode == "raw":
        filter_index = None
    else:
        filter_index = build_filter_index(
            add_inverse(dataset.train, dataset.num_relations),
            add_inverse(dataset.valid, dataset.num_relations),
            add_inverse(dataset.test, dataset.num_relations))

    chunks = [queries[i:i + chunk_size] for i in range(0, len(queries), chunk_size)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(
                lambda ch: _score_chunk(params, cfg, dataset, ch), chunks))
    else:
        scored = [_score_chunk(params, cfg, dataset, ch) for ch in chunks]

    ranks, directions = [], []
    for chunk, scores in zip(chunks, scored):
        for (s, r, gold, t, direction), row in zip(chunk, scores):
            filtered = set(_filter_set(filter_index, filter_mode, s, r, t))
            filtered.discard(gold)
            ranks.append(_rank_one(row, gold, filtered))
            directions.append(direction)
    return RankReport.from_ranks(ranks, directions)


def frequency_baseline(dataset, split="test", filter_mode="time_aware"):
    """Rank candidates by train-split (s, r) -> o counts, with a global
    object-frequency backoff for unseen pairs; evaluated exactly like the
    model (same queries, filters and pessimistic tie handling)."""
    train_aug = add_inverse(dataset.train, dataset.num_relations)
    pair_counts = {}
    global_counts = np.zeros(dataset.num_entities, dtype=np.float64)
    for q in train_aug:
        key = (q.s, q.r)
        if key not in pair_counts:
            pair_counts[key] = np.zeros(dataset.num_entities, dtype=np.float64)
        pair_counts[key][q.o] += 1.0
        global_counts[q.o] += 1.0

    if filter_mode == "raw":
        filter_index = None
    else:
        filter_index = build_filter_index(
            train_aug, add_inverse(dataset.valid, dataset.num_relations),
            add_inverse(dataset.test, dataset.num_relations))

    ranks, directions = [], []
    for s, r, gold, t, direction in _query_list(dataset, split):
        scores = pair_counts.get((s, r), global_counts)
        filtered = set(_filter_set(filter_index, filter_mode, s, r, t))
        filtered.discard(gold)
        ranks.append(_rank_one(scores, gold, filtered))
        directions.append(direction)
    return RankReport.from_ranks(ranks, directions)


# -- exports and benchmarking -------------------------------------------------

def export_agb_weights(params, cfg, dataset, split, out_path, chunk_size=1024):
    """CSV of per-query granularity weights for both directions of a split.

    Columns: subject, relation, timestamp, direction, theta_year,
    theta_month, theta_day; a final `mean` row carries per-column means."""
    queries = _query_list(dataset, split)
    vocab = dataset.vocab
    rows = []
    for i in range(0, len(queries), chunk_size):
        chunk = queries[i:i + chunk_size]
        quads = [Quadruple(s, r, gold, t, inverse=r >= dataset.num_relations)
                 for s, r, gold, t, _ in chunk]
        with ad.no_grad():
            _, weights, _ = _forward(params, cfg, dataset, quads, False, None)
        for (s, r, gold, t, direction), w in zip(chunk, weights.data):
            base_r = r if r < dataset.num_relations else r - dataset.num_relations
            rel = vocab.relation.string(base_r)
            if r >= dataset.num_relations:
                rel += "^-1"
            rows.append((vocab.entity.string(s), rel, vocab.timestamp.string(t),
                         direction, w[0], w[1], w[2]))

    means = np.mean([[r[4], r[5], r[6]] for r in rows], axis=0) if rows else [0, 0, 0]
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "relation", "timestamp", "direction",
                         "theta_year", "theta_month", "theta_day"])
        for row in rows:
            writer.writerow([*row[:4]] + [f"{v:.10f}" for v in row[4:]])
        writer.writerow(["mean", "", "", ""] + [f"{v:.10f}" for v in means])
    return out_path


def bench(cfg, dataset, sizes=(64, 128, 256, 512), steps=5, warmup=2):
    """Wall time per training step at several batch sizes.

    Fits log(time) against log(batch) to report the observed growth
    exponent; per-step cost is expected to grow about linearly in the batch.
    Also reports the trainable-parameter count for the configuration."""
    ad.set_precision(cfg.precision)
    ss = np.random.SeedSequence(cfg.seed)
    init_seed, neg_ss, drop_ss = ss.spawn(3)
    neg_rng = np.random.default_rng(neg_ss)
    drop_rng = np.random.default_rng(drop_ss)
    vocab = dataset.vocab
    params = M.ModelParams.init(
        dataset.num_entities, dataset.num_relations, len(vocab.year),
        len(vocab.month), len(vocab.day), dim=cfg.dim, channels=cfg.channels,
        kernel=cfg.kernel, seed=init_seed)
    optimizer = Adam(_trainable(params, cfg, use_temporal=False), lr=cfg.lr)
    train_quads = add_inverse(dataset.train, dataset.num_relations)

    def one_step(batch):
        negs = np.stack([
            sample_negatives(q, cfg.negatives, neg_rng, dataset.num_entities)
            for q in batch])
        x_out, _, _ = _forward(params, cfg, dataset, batch, True, drop_rng)
        gold = np.array([q.o for q in batch], dtype=np.int64)
        cand = np.concatenate([gold[:, None], negs], axis=1)
        _, probs = M.score_candidates(x_out, params.entity, cand)
        loss = main_loss(probs, np.zeros(len(batch), dtype=np.int64),
                         np.tile(np.arange(1, cfg.negatives + 1), (len(batch), 1)),
                         cfg.neg_weighting)
        loss.backward()
        optimizer.step()

    rows = []
    for size in sizes:
        batch = [train_quads[i % len(train_quads)] for i in range(size)]
        for _ in range(warmup):
            one_step(batch)
        start = time.perf_counter()
        for _ in range(steps):
            one_step(batch)
        rows.append({"batch_size": size,
                     "seconds_per_step": (time.perf_counter() - start) / steps})

    logs = np.log([r["batch_size"] for r in rows])
    logt = np.log([max(r["seconds_per_step"], 1e-9) for r in rows])
    exponent = float(np.polyfit(logs, logt, 1)[0])
    return {"rows": rows, "growth_exponent": exponent,
            "parameter_count": M.count_parameters(params)}
