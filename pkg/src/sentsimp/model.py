"""GRU encoder-decoder with global attention, word copying and a two-part loss.

Architecture summary:

* encoder: N-layer unidirectional GRU over projected input embeddings;
* a per-layer affine bridge maps each encoder final state to the matching
  decoder initial state;
* attention: softmax over dot products of the top decoder state with every
  top-layer encoder state; the context vector is the attention-weighted sum;
* output distribution: softmax over an affine map of [context, decoder state]
  (decoder state alone when attention is off);
* copying: emitting the copy token means "output the input word under the
  attention argmax"; with copy feeding on, the copied word (not the copy
  token) is embedded as the next decoder input during generation.

Dropout is applied, in training mode only, at exactly four sites: the word
projection outputs (both sides), the top-layer encoder hiddens consumed by
attention, the context vector, and the top decoder hidden feeding the output
layer.  Recurrent paths always see undropped states.

GRU convention (fixed so the zero-weight case is testable):
    z = sigmoid(Wz x + Uz h + bz)
    r = sigmoid(Wr x + Ur h + br)
    hcand = tanh(Wh x + Uh (r*h) + bh)
    h' = (1 - z)*h + z*hcand
With all weights and biases zero this gives h' = 0.5*h.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .vocab import CPY, MixedEmbeddingTable, Vocabulary, INIT_RANGE


@dataclass
class Hyperparams:
    layers: int = 2
    hidden: int = 512
    embedding_dim: int = 300
    max_len: int = 50
    use_attention: bool = True
    use_copy_feed: bool = True
    use_bce_loss: bool = False
    trainable_embed_count: int | None = 5000

    def __post_init__(self):
        if self.max_len < 1 or self.hidden < 1 or self.layers < 1:
            raise ValueError("max_len, hidden and layers must all be >= 1")

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "hidden": self.hidden,
            "embedding_dim": self.embedding_dim,
            "max_len": self.max_len,
            "use_attention": self.use_attention,
            "use_copy_feed": self.use_copy_feed,
            "use_bce_loss": self.use_bce_loss,
            "trainable_embed_count": self.trainable_embed_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**d)


def scaled_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Weight init U(-1, 1)/sqrt(fan_in); embeddings use the flat INIT_RANGE."""
    return rng.uniform(-1.0, 1.0, (rows, cols)) / np.sqrt(rows)


class GRUWeights:
    """One GRU layer's parameters."""

    NAMES = ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        def w(rows, cols):
            return Tensor(scaled_uniform(rng, rows, cols), requires_grad=True)

        def b():
            return Tensor(np.zeros((1, hidden)), requires_grad=True)

        self.wz, self.uz, self.bz = w(in_dim, hidden), w(hidden, hidden), b()
        self.wr, self.ur, self.br = w(in_dim, hidden), w(hidden, hidden), b()
        self.wh, self.uh, self.bh = w(in_dim, hidden), w(hidden, hidden), b()

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.{n}", getattr(self, n)) for n in self.NAMES]


def gru_cell(x: Tensor, h: Tensor, w: GRUWeights) -> Tensor:
    """One GRU step; see the module docstring for the gate convention."""
    z = T.sigmoid(T.add(T.add(T.matmul(x, w.wz), T.matmul(h, w.uz)), w.bz))
    r = T.sigmoid(T.add(T.add(T.matmul(x, w.wr), T.matmul(h, w.ur)), w.br))
    hcand = T.tanh(T.add(T.add(T.matmul(x, w.wh), T.matmul(T.mul(r, h), w.uh)), w.bh))
    return T.add(T.mul(T.one_minus(z), h), T.mul(z, hcand))


class ModelParams:
    """All trainable weights plus the two embedding tables and vocabularies."""

    def __init__(
        self,
        hp: Hyperparams,
        input_vocab: Vocabulary,
        output_vocab: Vocabulary,
        enc_table: MixedEmbeddingTable,
        dec_table: MixedEmbeddingTable,
        rng: np.random.Generator,
    ):
        self.hp = hp
        self.input_vocab = input_vocab
        self.output_vocab = output_vocab
        self.enc_table = enc_table
        self.dec_table = dec_table

        h = hp.hidden
        self.enc_layers = [GRUWeights(h, h, rng) for _ in range(hp.layers)]
        self.dec_layers = [GRUWeights(h, h, rng) for _ in range(hp.layers)]
        self.bridge_w = [
            Tensor(scaled_uniform(rng, h, h), requires_grad=True) for _ in range(hp.layers)
        ]
        self.bridge_b = [Tensor(np.zeros((1, h)), requires_grad=True) for _ in range(hp.layers)]
        out_in = 2 * h if hp.use_attention else h
        self.w_out = Tensor(scaled_uniform(rng, out_in, output_vocab.size), requires_grad=True)
        self.b_out = Tensor(np.zeros((1, output_vocab.size)), requires_grad=True)

    @property
    def cpy_feed_id(self) -> int:
        return self.dec_table.extra_id(CPY)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Every trainable tensor exactly once, in a fixed order."""
        out: list[tuple[str, Tensor]] = []
        out += self.enc_table.named_parameters("enc_emb")
        out += self.dec_table.named_parameters("dec_emb")
        for i, lw in enumerate(self.enc_layers):
            out += lw.named(f"enc.l{i}")
        for i, lw in enumerate(self.dec_layers):
            out += lw.named(f"dec.l{i}")
        for i in range(self.hp.layers):
            out.append((f"bridge.{i}.w", self.bridge_w[i]))
            out.append((f"bridge.{i}.b", self.bridge_b[i]))
        out.append(("out.w", self.w_out))
        out.append(("out.b", self.b_out))
        return out

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters())


class EncoderState:
    """Per-layer final states plus the top-layer hidden sequence.

    Access to the top-layer sequence goes through ``top_matrix``/``top``
    and is counted, so tests can assert the no-attention variant never
    reads it.
    """

    def __init__(self, top: list[Tensor], finals: list[Tensor]):
        self._top = top
        self.finals = finals
        self._top_mat: Tensor | None = None
        self.top_reads = 0

    @property
    def length(self) -> int:
        return len(self._top)

    def top_matrix(self) -> Tensor:
        self.top_reads += 1
        if self._top_mat is None:
            self._top_mat = self._top[0] if len(self._top) == 1 else T.stack_rows(self._top)
        return self._top_mat

    def top(self, j: int) -> Tensor:
        self.top_reads += 1
        return self._top[j]


@dataclass
class DecodeTrace:
    """Per-step attention and copy bookkeeping for one decoded sentence."""

    attention: list[np.ndarray | None] = field(default_factory=list)
    jstar: list[int | None] = field(default_factory=list)
    emitted: list[int] = field(default_factory=list)
    surface: list[str | None] = field(default_factory=list)
    p_cpy: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.emitted)


def encode(
    ids: Sequence[int],
    params: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_ratio: float = 0.0,
) -> EncoderState:
    """Run the encoder stack left to right from zero initial states."""
    hp = params.hp
    if len(ids) == 0:
        raise ValueError("encode: input must contain at least one token")
    if len(ids) > hp.max_len:
        raise ValueError(f"encode: input length {len(ids)} exceeds max_len {hp.max_len}")
    emb = params.enc_table.embed(ids)
    emb = T.dropout(emb, dropout_ratio, training, rng)
    xs = [T.row(emb, t) for t in range(len(ids))]
    finals: list[Tensor] = []
    for layer in range(hp.layers):
        h = Tensor(np.zeros((1, hp.hidden)))
        outs: list[Tensor] = []
        for x in xs:
            h = gru_cell(x, h, params.enc_layers[layer])
            outs.append(h)
        finals.append(h)
        xs = outs
    top = [T.dropout(h, dropout_ratio, training, rng) for h in xs]
    return EncoderState(top, finals)


def attend(h_dec: Tensor, enc: EncoderState) -> tuple[Tensor, Tensor]:
    """Dot-product attention and context over the top encoder states."""
    mat = enc.top_matrix()
    scores = T.matmul(h_dec, T.transpose(mat))
    a = T.softmax_rows(scores)
    c = T.matmul(a, mat)
    return a, c


def output_dist(c: Tensor | None, h_dec: Tensor, params: ModelParams) -> Tensor:
    """Distribution over the output vocabulary for one step."""
    feat = h_dec if c is None else T.concat(c, h_dec, axis=1)
    return T.softmax_rows(T.add(T.matmul(feat, params.w_out), params.b_out))


def _bridge(params: ModelParams, enc: EncoderState) -> list[Tensor]:
    return [
        T.add(T.matmul(enc.finals[l], params.bridge_w[l]), params.bridge_b[l])
        for l in range(params.hp.layers)
    ]


def _decoder_step(
    params: ModelParams,
    x: Tensor,
    hs: list[Tensor],
    enc: EncoderState,
    training: bool,
    rng: np.random.Generator | None,
    dropout_ratio: float,
    forced_row: np.ndarray | None,
) -> tuple[Tensor, list[Tensor], np.ndarray | None, int | None]:
    hp = params.hp
    inp = x
    for layer in range(hp.layers):
        hs[layer] = gru_cell(inp, hs[layer], params.dec_layers[layer])
        inp = hs[layer]
    h_top = T.dropout(hs[-1], dropout_ratio, training, rng)
    a_vec: np.ndarray | None = None
    jstar: int | None = None
    c = None
    if hp.use_attention:
        if forced_row is not None:
            a = Tensor(forced_row[None, :])
            c = T.matmul(a, enc.top_matrix())
        else:
            a, c = attend(h_top, enc)
        a_vec = a.data[0].copy()
        jstar = int(np.argmax(a_vec))
        c = T.dropout(c, dropout_ratio, training, rng)
    dist = output_dist(c, h_top, params)
    return dist, hs, a_vec, jstar


def _record_step(trace: DecodeTrace, dist: Tensor, a_vec, jstar, params: ModelParams) -> int:
    emitted = int(np.argmax(dist.data[0]))
    trace.attention.append(a_vec)
    trace.jstar.append(jstar)
    trace.emitted.append(emitted)
    trace.surface.append(None)
    trace.p_cpy.append(
        float(dist.data[0, params.output_vocab.cpy_id]) if params.output_vocab.has_cpy else 0.0
    )
    return emitted


def decode_train(
    enc: EncoderState,
    tgt_out_ids: Sequence[int],
    tgt_feed_ids: Sequence[int],
    params: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_ratio: float = 0.0,
    forced_attention: Sequence[np.ndarray | None] | None = None,
) -> tuple[list[Tensor], DecodeTrace]:
    """Teacher-forced decoding: step i consumes ground-truth token i-1 (BOS first).

    `tgt_out_ids` are output-vocabulary targets (callers pre-map out-of-vocab
    words to UNK); `tgt_feed_ids` are the same surface tokens resolved in the
    decoder input space.  Returns one distribution per target position plus
    the decode trace.
    """
    hp = params.hp
    L = len(tgt_out_ids)
    if not 1 <= L <= hp.max_len:
        raise ValueError(f"decode_train: target length {L} outside [1, {hp.max_len}]")
    if len(tgt_feed_ids) != L:
        raise ValueError("decode_train: feed ids and target ids must have equal length")
    vs = params.output_vocab.size
    for y in tgt_out_ids:
        if not 0 <= y < vs:
            raise ValueError(f"decode_train: target id {y} outside output vocabulary [0, {vs})")
    if forced_attention is not None and len(forced_attention) != L:
        raise ValueError("decode_train: forced attention length must match target length")

    feed_seq = [params.input_vocab.bos_id] + list(tgt_feed_ids[:-1])
    emb = params.dec_table.embed(feed_seq)
    emb = T.dropout(emb, dropout_ratio, training, rng)
    hs = _bridge(params, enc)
    dists: list[Tensor] = []
    trace = DecodeTrace()
    for i in range(L):
        forced = forced_attention[i] if forced_attention is not None else None
        dist, hs, a_vec, jstar = _decoder_step(
            params, T.row(emb, i), hs, enc, training, rng, dropout_ratio, forced
        )
        dists.append(dist)
        _record_step(trace, dist, a_vec, jstar, params)
    return dists, trace


def decode_generate(
    enc_ids: Sequence[int],
    enc_tokens: Sequence[str],
    params: ModelParams,
    max_len: int | None = None,
) -> tuple[list[str], DecodeTrace]:
    """Greedy generation with copy resolution, untracked by the tape.

    Emitting CPY outputs the input surface token at the attention argmax.
    With copy feeding on, that copied word's id (decoder embedding path) is
    fed as the next input; with feeding off, the dedicated copy-token row is
    fed instead.  Stops at EOS or after max_len tokens.
    """
    hp = params.hp
    max_len = hp.max_len if max_len is None else min(max_len, hp.max_len)
    out_vocab = params.output_vocab
    in_vocab = params.input_vocab
    tokens: list[str] = []
    trace = DecodeTrace()
    with T.no_grad():
        enc = encode(enc_ids, params)
        hs = _bridge(params, enc)
        feed = in_vocab.bos_id
        for _ in range(max_len):
            x = params.dec_table.embed([feed])
            dist, hs, a_vec, jstar = _decoder_step(
                params, x, hs, enc, False, None, 0.0, None
            )
            emitted = _record_step(trace, dist, a_vec, jstar, params)
            if emitted == out_vocab.eos_id:
                break
            if out_vocab.has_cpy and emitted == out_vocab.cpy_id:
                if jstar is not None:
                    surface = enc_tokens[jstar]
                    feed = in_vocab.id_of(surface) if hp.use_copy_feed else params.cpy_feed_id
                else:
                    # no attention, so the copy token has no referent
                    surface = CPY
                    feed = params.cpy_feed_id
            else:
                surface = out_vocab.token_of(emitted)
                feed = in_vocab.id_of(surface)
            trace.surface[-1] = surface
            tokens.append(surface)
    return tokens, trace


def decode_with_gt_alignments(
    enc: EncoderState,
    tgt_out_ids: Sequence[int],
    tgt_feed_ids: Sequence[int],
    gt_matrix: np.ndarray,
    params: ModelParams,
) -> tuple[list[Tensor], DecodeTrace]:
    """Teacher-forced pass with attention replaced by normalised gold alignments.

    Rows of `gt_matrix` (one per target position, width = encoder length) are
    normalised to sum 1; all-zero rows fall back to model attention.
    """
    gt = np.asarray(gt_matrix, dtype=np.float64)
    if gt.shape != (len(tgt_out_ids), enc.length):
        raise ValueError(
            f"alignment matrix shape {gt.shape} does not match "
            f"(targets {len(tgt_out_ids)}, encoder {enc.length})"
        )
    forced: list[np.ndarray | None] = []
    for r in gt:
        s = r.sum()
        forced.append(r / s if s > 0 else None)
    return decode_train(enc, tgt_out_ids, tgt_feed_ids, params, forced_attention=forced)


def copy_targets(
    enc_tokens: Sequence[str], trace: DecodeTrace, tgt_tokens: Sequence[str]
) -> list[bool]:
    """Per position: does the input word under the attention argmax equal the target?"""
    if len(trace) != len(tgt_tokens):
        raise ValueError("copy_targets: trace and target lengths differ")
    out = []
    for jstar, tgt in zip(trace.jstar, tgt_tokens):
        out.append(jstar is not None and enc_tokens[jstar] == tgt)
    return out


def _ce_sum(dists: Sequence[Tensor], tgt_ids: Sequence[int]) -> Tensor:
    total = None
    for dist, y in zip(dists, tgt_ids):
        term = T.neg(T.log(T.pick(dist, int(y))))
        total = term if total is None else T.add(total, term)
    return total


def _bce_sum(dists: Sequence[Tensor], kappa: Sequence[bool], cpy_id: int) -> Tensor:
    total = None
    for dist, k in zip(dists, kappa):
        p = T.pick(dist, cpy_id)
        term = T.neg(T.log(p)) if k else T.neg(T.log(T.one_minus(p)))
        total = term if total is None else T.add(total, term)
    return total


def loss_ce(dists: Sequence[Tensor], tgt_ids: Sequence[int]) -> Tensor:
    """Mean categorical cross-entropy over the sentence."""
    if len(dists) != len(tgt_ids):
        raise ValueError("loss_ce: lengths differ")
    return T.scale(_ce_sum(dists, tgt_ids), 1.0 / len(tgt_ids))


def loss_bce(dists: Sequence[Tensor], kappa: Sequence[bool], cpy_id: int) -> Tensor:
    """Copy-encouraging binary cross-entropy, summed over positions.

    Positions whose attended input word equals the target push P(cpy) up,
    all others push it down.  The 1/L normalisation is applied once over
    the whole two-part sum in loss_total.
    """
    if len(dists) != len(kappa):
        raise ValueError("loss_bce: lengths differ")
    return _bce_sum(dists, kappa, cpy_id)


def loss_total(
    dists: Sequence[Tensor],
    tgt_ids: Sequence[int],
    kappa: Sequence[bool] | None,
    use_bce: bool,
    cpy_id: int | None = None,
) -> Tensor:
    """(cross-entropy sum [+ copy bce sum]) / L, differentiable end to end."""
    total = _ce_sum(dists, tgt_ids)
    if use_bce:
        if kappa is None or cpy_id is None:
            raise ValueError("loss_total: use_bce needs kappa and the copy-token id")
        total = T.add(total, _bce_sum(dists, kappa, cpy_id))
    return T.scale(total, 1.0 / len(tgt_ids))
