"""Query encoder: GRU time encoding, relation updating, per-timestamp
generated convolution filters, the three-layer conv stack, and the adaptive
granularity gate that fuses the per-granularity representations.

All linear maps are stored (in, out) and applied batch-major (x @ W).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GruWeights, Tensor
from .errors import IntegrityError
from .optim import xavier_init, zeros


@dataclass
class ModelParams:
    """Every trainable tensor of the model, plus the geometry that sized them."""
    dim: int
    channels: int
    kernel: int
    entity: Tensor
    relation: Tensor
    year: Tensor
    month: Tensor
    day: Tensor
    gru: GruWeights
    time_proj_w: Tensor      # (3d, d): fuses [y||m||d] into one time vector
    time_proj_b: Tensor
    rel_proj_w: Tensor       # (2d, d): fuses [r||t] into the updated relation
    rel_proj_b: Tensor
    gen_year: Tensor         # (d, C*1*k*k): layer-1 filter generator
    gen_month: Tensor        # (d, C*C*k*k)
    gen_day: Tensor          # (d, C*C*k*k)
    proj_year_w: Tensor      # (2*C*d, d): flattened feature map -> embedding
    proj_year_b: Tensor
    proj_month_w: Tensor
    proj_month_b: Tensor
    proj_day_w: Tensor
    proj_day_b: Tensor
    gate_year: Tensor        # (d, 1): granularity-weight logit
    gate_month: Tensor
    gate_day: Tensor

    @classmethod
    def init(cls, num_entities, num_relations, num_years, num_months, num_days,
             dim, channels, kernel, seed):
        """Xavier-initialize all tables and maps; biases start at zero.

        num_relations counts base relations only; the table holds 2|R| rows so
        inverse relations get their own embeddings.
        """
        rng = np.random.default_rng(seed)
        d, c, k = dim, channels, kernel
        x = lambda *shape: xavier_init(shape, rng)
        gru = GruWeights(wz=x(d, d), uz=x(d, d), bz=zeros(d),
                         wr=x(d, d), ur=x(d, d), br=zeros(d),
                         wh=x(d, d), uh=x(d, d), bh=zeros(d))
        return cls(
            dim=d, channels=c, kernel=k,
            entity=x(num_entities, d),
            relation=x(2 * num_relations, d),
            year=x(num_years, d),
            month=x(num_months, d),
            day=x(num_days, d),
            gru=gru,
            time_proj_w=x(3 * d, d), time_proj_b=zeros(d),
            rel_proj_w=x(2 * d, d), rel_proj_b=zeros(d),
            gen_year=x(d, c * 1 * k * k),
            gen_month=x(d, c * c * k * k),
            gen_day=x(d, c * c * k * k),
            proj_year_w=x(2 * c * d, d), proj_year_b=zeros(d),
            proj_month_w=x(2 * c * d, d), proj_month_b=zeros(d),
            proj_day_w=x(2 * c * d, d), proj_day_b=zeros(d),
            gate_year=x(d, 1), gate_month=x(d, 1), gate_day=x(d, 1),
        )

    def named(self):
        """Stable {name: Tensor} view; each trainable appears exactly once."""
        out = {"entity": self.entity, "relation": self.relation,
               "year": self.year, "month": self.month, "day": self.day}
        out.update(self.gru.named())
        out.update({
            "time_proj_w": self.time_proj_w, "time_proj_b": self.time_proj_b,
            "rel_proj_w": self.rel_proj_w, "rel_proj_b": self.rel_proj_b,
            "gen_year": self.gen_year, "gen_month": self.gen_month,
            "gen_day": self.gen_day,
            "proj_year_w": self.proj_year_w, "proj_year_b": self.proj_year_b,
            "proj_month_w": self.proj_month_w, "proj_month_b": self.proj_month_b,
            "proj_day_w": self.proj_day_w, "proj_day_b": self.proj_day_b,
            "gate_year": self.gate_year, "gate_month": self.gate_month,
            "gate_day": self.gate_day,
        })
        return out

    def copy(self):
        clone = {name: Tensor(t.data.copy(), requires_grad=True)
                 for name, t in self.named().items()}
        gru = GruWeights(**{f: clone[f"gru.{f}"]
                            for f in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")})
        return ModelParams(dim=self.dim, channels=self.channels, kernel=self.kernel,
                           gru=gru,
                           **{k: clone[k] for k in clone if not k.startswith("gru.")})


def count_parameters(params):
    return sum(t.size for t in params.named().values())


def encode_time(params, year_idx, month_idx, day_idx):
    """GRU over the (year, month, day) sequence from a zero hidden state.

    Returns the three hidden states; sharing a calendar prefix means sharing
    the corresponding outputs."""
    y0 = ad.take(params.year, year_idx)
    m0 = ad.take(params.month, month_idx)
    d0 = ad.take(params.day, day_idx)
    h0 = Tensor(np.zeros_like(y0.data))
    y = ad.gru_cell(y0, h0, params.gru)
    m = ad.gru_cell(m0, y, params.gru)
    d = ad.gru_cell(d0, m, params.gru)
    return y, m, d


def time_vector(params, y, m, d):
    """Composed timestamp embedding t = LeakyReLU(W_t [y||m||d] + b_t)."""
    return ad.leaky_relu(ad.matmul(ad.concat((y, m, d), axis=1),
                                   params.time_proj_w) + params.time_proj_b)


def relation_update(params, s_init, r_init, y, m, d, no_ru=False):
    """Fuse time into the relation and build the conv input [s || r].

    With no_ru the fusion is bypassed and the raw relation is used; the
    composed time vector is still returned for the temporal regularizer."""
    t = time_vector(params, y, m, d)
    if no_ru:
        return ad.concat((s_init, r_init), axis=1), t
    r = ad.leaky_relu(ad.matmul(ad.concat((r_init, t), axis=1),
                                params.rel_proj_w) + params.rel_proj_b)
    return ad.concat((s_init, r), axis=1), t


def generate_filters(params, y, m, d):
    """Per-sample conv kernels from the granularity embeddings.

    Layer 1 maps 1->C channels, layers 2 and 3 map C->C."""
    b = y.shape[0]
    c, k = params.channels, params.kernel
    shapes = ((b, c, 1, k, k), (b, c, c, k, k), (b, c, c, k, k))
    gens = (params.gen_year, params.gen_month, params.gen_day)
    out = []
    for emb, gen, shape in zip((y, m, d), gens, shapes):
        need = int(np.prod(shape[1:]))
        if gen.shape[1] != need:
            raise IntegrityError(
                f"filter generator emits {gen.shape[1]} values, kernel needs {need}")
        out.append(ad.reshape(ad.matmul(emb, gen), shape))
    return tuple(out)


def conv_stack(params, x_input, filters, dropout_rate=0.0, training=False,
               rng=None, input_dropout=True):
    """Three stacked per-sample convolutions over the 2 x d feature map.

    x_input (batch, 2d) is reshaped to a single-channel two-row image
    (subject row, relation row). Each layer applies its generated filter,
    ReLU and dropout; each intermediate map is also projected to one
    granularity embedding."""
    b = x_input.shape[0]
    d = params.dim
    fmap = ad.reshape(x_input, (b, 1, 2, d))
    if input_dropout:
        fmap = ad.dropout(fmap, dropout_rate, training, rng)
    embeddings = []
    x = fmap
    for kern, (proj_w, proj_b) in zip(filters, (
            (params.proj_year_w, params.proj_year_b),
            (params.proj_month_w, params.proj_month_b),
            (params.proj_day_w, params.proj_day_b))):
        x = ad.dropout(ad.relu(ad.conv2d_batch(x, kern)), dropout_rate, training, rng)
        flat = ad.reshape(x, (b, 2 * params.channels * d))
        embeddings.append(ad.matmul(flat, proj_w) + proj_b)
    return tuple(embeddings)


def adaptive_weights(params, y, m, d, no_agb=False):
    """Per-query softmax weights over the three granularities, shape (batch, 3).

    no_agb replaces the gate with exact uniform thirds."""
    if no_agb:
        return Tensor(np.full((y.shape[0], 3), 1.0 / 3.0))
    logits = ad.concat((ad.matmul(y, params.gate_year),
                        ad.matmul(m, params.gate_month),
                        ad.matmul(d, params.gate_day)), axis=1)
    return ad.softmax(logits, axis=-1)


def fuse(x_y, x_m, x_d, weights):
    """Weighted sum of the granularity embeddings followed by ReLU."""
    mix = ad.mul(ad.narrow(weights, 1, 0, 1), x_y) \
        + ad.mul(ad.narrow(weights, 1, 1, 1), x_m) \
        + ad.mul(ad.narrow(weights, 1, 2, 1), x_d)
    return ad.relu(mix)


def score_all(x_output, entity_table):
    """Logits and sigmoid probabilities against every entity: (batch, |E|)."""
    logits = ad.matmul(x_output, ad.transpose(entity_table))
    return logits, ad.sigmoid(logits)


def score_candidates(x_output, entity_table, candidate_idx):
    """Logits/probabilities for per-query candidate lists (batch, K)."""
    cands = ad.take(entity_table, candidate_idx)           # (B, K, d)
    b, kk, d = cands.shape
    xo = ad.reshape(x_output, (b, 1, d))
    logits = ad.sum_(ad.mul(xo, cands), axis=2)
    return logits, ad.sigmoid(logits)


def forward_queries(params, s_idx, r_idx, y_idx, m_idx, d_idx, *,
                    no_ru=False, no_agb=False, dropout_rate=0.0,
                    training=False, rng=None, input_dropout=True):
    """Full encoder for a query batch; returns (x_output, weights, (y, m, d))."""
    y, m, d = encode_time(params, y_idx, m_idx, d_idx)
    s0 = ad.take(params.entity, s_idx)
    r0 = ad.take(params.relation, r_idx)
    x_input, _ = relation_update(params, s0, r0, y, m, d, no_ru=no_ru)
    filters = generate_filters(params, y, m, d)
    x_y, x_m, x_d = conv_stack(params, x_input, filters, dropout_rate,
                               training, rng, input_dropout)
    weights = adaptive_weights(params, y, m, d, no_agb=no_agb)
    x_output = fuse(x_y, x_m, x_d, weights)
    return x_output, weights, (y, m, d)


def compose_time_table(params, dataset):
    """Composed t vectors for every timestamp, in chronological order: (|T|, d)."""
    order = dataset.vocab.timestamp_order
    tt = dataset.time_triples
    y_idx = np.array([tt[t].year_idx for t in order], dtype=np.int64)
    m_idx = np.array([tt[t].month_idx for t in order], dtype=np.int64)
    d_idx = np.array([tt[t].day_idx for t in order], dtype=np.int64)
    y, m, d = encode_time(params, y_idx, m_idx, d_idx)
    return time_vector(params, y, m, d)
