"""Adam optimization, the two-phase training schedule and checkpointing.

Training runs in one or two phases: plain cross-entropy first, then (when
the copy loss is enabled) fine-tuning with the two-part objective starting
from the phase-1 best weights, with fresh optimizer moments.  Early stopping
monitors the phase objective on a fixed random sample of validation pairs.

Determinism: a run is a pure function of (seed, corpus, config).  The seed
feeds three independent streams (parameter init, training-time shuffling and
dropout, validation sampling); the training stream's state is stored in every
checkpoint, so a resumed run replays exactly the epochs an uninterrupted run
would have executed.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from . import model as M
from .model import Hyperparams, ModelParams
from .vocab import (
    CPY,
    EOS,
    INPUT_SPECIALS,
    OUTPUT_SPECIALS,
    MixedEmbeddingTable,
    Vocabulary,
    build_mixed_table,
    build_output_vocab,
)

CHECKPOINT_VERSION = 1
_MAGIC = b"SSIMPCK\x00"


class CheckpointError(Exception):
    """Unreadable or corrupt checkpoint file."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an unknown (newer) format version."""


@dataclass
class TrainConfig:
    batch_size: int = 256
    dropout: float = 0.7
    validation_sample: int = 1024
    patience: int = 3
    max_epochs: int = 10
    phase2_max_epochs: int | None = None  # fine-tune budget; None = max_epochs
    phase2_lr: float | None = None  # fine-tune step size; None = lr
    seed: int = 0
    early_stop_metric: str = "loss"  # "loss" or "bleu"
    lr: float = 0.001

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.early_stop_metric not in ("loss", "bleu"):
            raise ValueError("early_stop_metric must be 'loss' or 'bleu'")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "dropout": self.dropout,
            "validation_sample": self.validation_sample,
            "patience": self.patience,
            "max_epochs": self.max_epochs,
            "phase2_max_epochs": self.phase2_max_epochs,
            "phase2_lr": self.phase2_lr,
            "seed": self.seed,
            "early_stop_metric": self.early_stop_metric,
            "lr": self.lr,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


class AdamState:
    """Bias-corrected Adam moments for a fixed set of named parameters."""

    def __init__(
        self,
        named_params: Sequence[tuple[str, T.Tensor]],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in named_params}


def adam_step(named_params: Sequence[tuple[str, T.Tensor]], state: AdamState) -> None:
    """One in-place Adam update; every registered parameter must carry a grad."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in named_params:
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name} has no gradient")
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class PreparedPair:
    enc_ids: list[int]
    enc_tokens: list[str]
    tgt_out_ids: list[int]
    tgt_feed_ids: list[int]
    tgt_tokens: list[str]


def prepare_pair(complex_tokens: Sequence[str], simple_tokens: Sequence[str], params: ModelParams) -> PreparedPair:
    """Truncate to max_len, append EOS to targets, resolve both id spaces."""
    max_len = params.hp.max_len
    enc_tokens = list(complex_tokens[:max_len])
    tgt_tokens = list(simple_tokens[: max_len - 1]) + [EOS]
    return PreparedPair(
        enc_ids=[params.input_vocab.id_of(t) for t in enc_tokens],
        enc_tokens=enc_tokens,
        tgt_out_ids=[params.output_vocab.id_of(t) for t in tgt_tokens],
        tgt_feed_ids=[params.input_vocab.id_of(t) for t in tgt_tokens],
        tgt_tokens=tgt_tokens,
    )


def prepare_pairs(pairs, params: ModelParams) -> list[PreparedPair]:
    """Prepare (complex, simple) token pairs, dropping ones with an empty side."""
    out = []
    for p in pairs:
        if p.complex and p.simple:
            out.append(prepare_pair(p.complex, p.simple, params))
    return out


def sentence_loss(
    params: ModelParams,
    prep: PreparedPair,
    use_bce: bool,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_ratio: float = 0.0,
) -> T.Tensor:
    enc = M.encode(prep.enc_ids, params, training, rng, dropout_ratio)
    dists, trace = M.decode_train(
        enc, prep.tgt_out_ids, prep.tgt_feed_ids, params, training, rng, dropout_ratio
    )
    kappa = None
    cpy_id = None
    if use_bce:
        kappa = M.copy_targets(prep.enc_tokens, trace, prep.tgt_tokens)
        cpy_id = params.output_vocab.cpy_id
    return M.loss_total(dists, prep.tgt_out_ids, kappa, use_bce, cpy_id)


def evaluate_validation(params: ModelParams, preps: Sequence[PreparedPair], use_bce: bool) -> float:
    """Mean loss over pairs with dropout disabled; order-invariant (fsum)."""
    if not preps:
        raise ValueError("evaluate_validation: no pairs")
    with T.no_grad():
        vals = [sentence_loss(params, p, use_bce).item() for p in preps]
    return math.fsum(vals) / len(vals)


def _validation_bleu(params: ModelParams, preps: Sequence[PreparedPair]) -> float:
    from .metrics import bleu

    cands = [M.decode_generate(p.enc_ids, p.enc_tokens, params)[0] for p in preps]
    refs = [p.tgt_tokens[:-1] for p in preps]  # strip the EOS marker
    return bleu(cands, refs)[3]


def build_model(
    train_pairs,
    hp: Hyperparams,
    rng: np.random.Generator,
    pretrained: dict[str, np.ndarray] | None = None,
) -> ModelParams:
    """Vocabularies, embedding tables and weights from the training split.

    The input vocabulary (shared by encoder and decoder feeding) is built
    over both sides of the training pairs; the output vocabulary over the
    simple side only, with the frequency floor.
    """
    both_sides = [p.complex for p in train_pairs] + [p.simple for p in train_pairs]
    simple_side = [p.simple for p in train_pairs]
    output_vocab = build_output_vocab(simple_side)
    input_vocab, enc_table = build_mixed_table(
        both_sides, pretrained, hp.trainable_embed_count, hp.hidden, hp.embedding_dim, rng
    )
    _, dec_table = build_mixed_table(
        both_sides,
        pretrained,
        hp.trainable_embed_count,
        hp.hidden,
        hp.embedding_dim,
        rng,
        extra_tokens=(CPY,),
        fixed_block=enc_table.fixed,
        vocab=input_vocab,
    )
    return ModelParams(hp, input_vocab, output_vocab, enc_table, dec_table, rng)


# ---------------------------------------------------------------------------
# checkpoint container


class Checkpoint:
    """Versioned, self-describing training snapshot.

    Holds the current parameters (for resuming), the best-validation
    parameters (for inference), optimizer moments, vocabulary tables, the
    training rng state and early-stopping bookkeeping.  ``save``/``load``
    round-trip all float64 tensors bit-exactly.
    """

    def __init__(
        self,
        hp: Hyperparams,
        config: TrainConfig,
        input_tokens: list[str],
        output_tokens: list[str],
        n_trainable_vocab_rows: int,
        arrays: dict[str, np.ndarray],
        train_state: dict,
    ):
        self.version = CHECKPOINT_VERSION
        self.hp = hp
        self.config = config
        self.input_tokens = input_tokens
        self.output_tokens = output_tokens
        self.n_trainable_vocab_rows = n_trainable_vocab_rows
        self.arrays = arrays
        self.train_state = train_state

    @property
    def best_val_score(self) -> float | None:
        return self.train_state.get("best_val")

    def save(self, path: str) -> None:
        header = {
            "version": self.version,
            "hyperparams": self.hp.to_dict(),
            "config": self.config.to_dict(),
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "n_trainable_vocab_rows": self.n_trainable_vocab_rows,
            "train_state": self.train_state,
            "tensors": [],
        }
        payload = bytearray()
        offset = 0
        for name in sorted(self.arrays):
            arr = np.ascontiguousarray(self.arrays[name], dtype=np.float64)
            raw = arr.tobytes()
            header["tensors"].append({"name": name, "shape": list(arr.shape), "offset": offset})
            payload += raw
            offset += len(raw)
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(bytes(payload))

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[: len(_MAGIC)] != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        try:
            (hlen,) = struct.unpack_from("<Q", raw, len(_MAGIC))
            start = len(_MAGIC) + 8
            header = json.loads(raw[start : start + hlen].decode("utf-8"))
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt checkpoint header") from exc
        version = header.get("version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"{path}: checkpoint version {version} not supported (this build reads {CHECKPOINT_VERSION})"
            )
        body = raw[start + hlen :]
        arrays = {}
        try:
            for spec in header["tensors"]:
                shape = tuple(spec["shape"])
                n = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(body, dtype="<f8", count=n, offset=spec["offset"]).reshape(shape)
                arrays[spec["name"]] = arr.copy()
            ckpt = cls(
                Hyperparams.from_dict(header["hyperparams"]),
                TrainConfig.from_dict(header["config"]),
                header["input_tokens"],
                header["output_tokens"],
                header["n_trainable_vocab_rows"],
                arrays,
                header["train_state"],
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise CheckpointError(f"{path}: corrupt checkpoint body") from exc
        return ckpt

    # -- model reconstruction ------------------------------------------------

    def _rebuild_tables(self) -> tuple[Vocabulary, MixedEmbeddingTable, MixedEmbeddingTable]:
        n_sp = len(INPUT_SPECIALS)
        input_vocab = Vocabulary(self.input_tokens[n_sp:], INPUT_SPECIALS)
        n_train = self.n_trainable_vocab_rows
        fixed = T.Tensor(self.arrays["fixed/emb"])

        def table(prefix: str, extra: tuple[str, ...]) -> MixedEmbeddingTable:
            n_rows = input_vocab.size + len(extra)
            row_block = np.zeros(n_rows, dtype=np.int8)
            row_index = np.zeros(n_rows, dtype=np.intp)
            row_index[:n_train] = np.arange(n_train)
            row_block[n_train : input_vocab.size] = 1
            row_index[n_train : input_vocab.size] = np.arange(input_vocab.size - n_train)
            row_index[input_vocab.size :] = np.arange(n_train, n_train + len(extra))
            return MixedEmbeddingTable(
                input_vocab,
                T.Tensor(self.arrays[f"param/{prefix}.trainable"], requires_grad=True),
                fixed,
                row_block,
                row_index,
                T.Tensor(self.arrays[f"param/{prefix}.proj_w"], requires_grad=True),
                T.Tensor(self.arrays[f"param/{prefix}.proj_b"], requires_grad=True),
                extra,
            )

        return input_vocab, table("enc_emb", ()), table("dec_emb", (CPY,))

    def build_model(self, which: str = "best") -> ModelParams:
        """Reconstruct a model from stored tensors ("best" or "current")."""
        if which not in ("best", "current"):
            raise ValueError("which must be 'best' or 'current'")
        input_vocab, enc_table, dec_table = self._rebuild_tables()
        n_sp = len(OUTPUT_SPECIALS)
        output_vocab = Vocabulary(self.output_tokens[n_sp:], OUTPUT_SPECIALS)
        params = ModelParams(
            self.hp, input_vocab, output_vocab, enc_table, dec_table, np.random.default_rng(0)
        )
        for name, p in params.named_parameters():
            key = f"best/{name}" if which == "best" else f"param/{name}"
            p.data = self.arrays[key].copy()
        return params

    def restore_adam(self, named_params: Sequence[tuple[str, T.Tensor]]) -> AdamState:
        lr = self.config.lr
        if self.train_state.get("phase") == 2 and self.config.phase2_lr is not None:
            lr = self.config.phase2_lr
        state = AdamState(named_params, lr=lr)
        state.t = int(self.train_state["adam_t"])
        for name, _ in named_params:
            state.m[name] = self.arrays[f"adam/m/{name}"].copy()
            state.v[name] = self.arrays[f"adam/v/{name}"].copy()
        return state

    def restore_rng(self) -> np.random.Generator:
        rng = np.random.Generator(np.random.PCG64())
        st = json.loads(self.train_state["rng_state"])
        st["state"] = {"state": int(st["state"]["state"]), "inc": int(st["state"]["inc"])}
        rng.bit_generator.state = st
        return rng


def _snapshot(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.named_parameters()}


def _make_checkpoint(
    params: ModelParams,
    adam: AdamState,
    config: TrainConfig,
    best: dict[str, np.ndarray],
    train_state: dict,
) -> Checkpoint:
    arrays: dict[str, np.ndarray] = {"fixed/emb": params.enc_table.fixed.data}
    for name, p in params.named_parameters():
        arrays[f"param/{name}"] = p.data
        arrays[f"adam/m/{name}"] = adam.m[name]
        arrays[f"adam/v/{name}"] = adam.v[name]
    for name, arr in best.items():
        arrays[f"best/{name}"] = arr
    n_train = params.enc_table.trainable.shape[0] - len(params.enc_table.extra_tokens)
    return Checkpoint(
        params.hp,
        config,
        list(params.input_vocab.tokens),
        list(params.output_vocab.tokens),
        n_train,
        arrays,
        train_state,
    )


# ---------------------------------------------------------------------------
# training loop


def _make_batches(n_pairs: int, preps: Sequence[PreparedPair], batch_size: int) -> list[list[int]]:
    order = sorted(range(n_pairs), key=lambda i: (len(preps[i].enc_ids), len(preps[i].tgt_out_ids), i))
    return [order[i : i + batch_size] for i in range(0, n_pairs, batch_size)]


def train(
    corpus,
    hp: Hyperparams,
    config: TrainConfig,
    pretrained: dict[str, np.ndarray] | None = None,
    resume_from: Checkpoint | None = None,
    interrupt_after_total_epochs: int | None = None,
    log: Callable[[str], None] | None = None,
) -> Checkpoint:
    """Train to early-stopping convergence and return the best checkpoint.

    Phase 1 minimizes cross-entropy; when the copy loss is enabled, phase 2
    resumes from the phase-1 best and minimizes the two-part objective with
    fresh Adam moments.  `config.max_epochs` bounds each phase separately.
    `interrupt_after_total_epochs` simulates stopping a run mid-way: training
    halts after that many total epochs and the returned checkpoint can be
    passed back via `resume_from` to continue identically.
    """

    def emit(line: str) -> None:
        if log is not None:
            log(line)

    train_pairs = corpus.subset("train")
    val_pairs = corpus.subset("val")
    if not train_pairs:
        raise ValueError("train: empty training split")

    if resume_from is not None:
        ckpt = resume_from
        config = ckpt.config
        hp = ckpt.hp
        params = ckpt.build_model("current")
        named = params.named_parameters()
        adam = ckpt.restore_adam(named)
        rng = ckpt.restore_rng()
        state = dict(ckpt.train_state)
        best = {name: ckpt.arrays[f"best/{name}"].copy() for name, _ in named}
        preps = prepare_pairs(train_pairs, params)
        val_base = prepare_pairs(val_pairs, params) if val_pairs else []
        val_indices = [int(i) for i in state["val_indices"]]
    else:
        ss = np.random.SeedSequence(config.seed)
        init_ss, train_ss, val_ss = ss.spawn(3)
        params = build_model(train_pairs, hp, np.random.Generator(np.random.PCG64(init_ss)), pretrained)
        named = params.named_parameters()
        adam = AdamState(named, lr=config.lr)
        rng = np.random.Generator(np.random.PCG64(train_ss))
        preps = prepare_pairs(train_pairs, params)
        val_base = prepare_pairs(val_pairs, params) if val_pairs else []
        if val_base:
            k = min(config.validation_sample, len(val_base))
            val_rng = np.random.Generator(np.random.PCG64(val_ss))
            val_indices = sorted(int(i) for i in val_rng.choice(len(val_base), size=k, replace=False))
        else:
            val_indices = []
        best = _snapshot(params)
        state = {
            "phase": 1,
            "epoch_in_phase": 0,
            "total_epochs": 0,
            "best_val": math.inf,
            "since_improve": 0,
            "val_indices": val_indices,
            "adam_t": 0,
            "done": False,
        }

    val_preps = [val_base[i] for i in val_indices]
    use_bce_final = hp.use_bce_loss

    def phase_uses_bce() -> bool:
        return state["phase"] == 2

    def validation_score() -> float:
        if not val_preps:
            return math.nan
        if config.early_stop_metric == "bleu":
            return -_validation_bleu(params, val_preps)
        return evaluate_validation(params, val_preps, phase_uses_bce())

    def advance_phase() -> None:
        # phase transition: adopt best weights, fresh moments, fresh stopping state
        nonlocal adam
        for name, p in named:
            p.data = best[name].copy()
        adam = AdamState(named, lr=config.phase2_lr if config.phase2_lr is not None else config.lr)
        state["phase"] = 2
        state["epoch_in_phase"] = 0
        state["best_val"] = math.inf
        state["since_improve"] = 0
        for name, p in named:
            best[name] = p.data.copy()
        emit("phase=2")

    def phase_done() -> bool:
        budget = config.max_epochs
        if state["phase"] == 2 and config.phase2_max_epochs is not None:
            budget = config.phase2_max_epochs
        if state["epoch_in_phase"] >= budget:
            return True
        return state["since_improve"] > config.patience and state["epoch_in_phase"] > 0

    if state["phase"] == 1 and not state["done"]:
        emit("phase=1")

    while not state["done"]:
        if phase_done():
            if state["phase"] == 1 and use_bce_final:
                advance_phase()
                continue
            state["done"] = True
            break
        if (
            interrupt_after_total_epochs is not None
            and state["total_epochs"] >= interrupt_after_total_epochs
        ):
            break

        state["epoch_in_phase"] += 1
        state["total_epochs"] += 1
        batches = _make_batches(len(preps), preps, config.batch_size)
        order = rng.permutation(len(batches))
        epoch_losses = []
        for bi in order:
            batch = batches[bi]
            for _, p in named:
                p.grad = None
            inv = 1.0 / len(batch)
            for idx in batch:
                T.tape().clear()
                loss = sentence_loss(
                    params, preps[idx], phase_uses_bce(), training=True, rng=rng,
                    dropout_ratio=config.dropout,
                )
                epoch_losses.append(loss.item())
                T.backward(T.scale(loss, inv))
            T.tape().clear()
            adam_step(named, adam)
        val = validation_score()
        emit(f"epoch={state['total_epochs']}")
        emit(f"train_loss={math.fsum(epoch_losses) / len(epoch_losses)!r}")
        emit(f"val_loss={val!r}")

        if math.isnan(val):
            # no validation split: keep the latest weights, never early-stop
            for name, p in named:
                best[name] = p.data.copy()
        elif val < state["best_val"]:
            state["best_val"] = val
            state["since_improve"] = 0
            for name, p in named:
                best[name] = p.data.copy()
        else:
            state["since_improve"] += 1

    state["adam_t"] = adam.t
    state["rng_state"] = json.dumps(rng.bit_generator.state, sort_keys=True)
    return _make_checkpoint(params, adam, config, best, state)
