"""Gradient verification suite: per-op checks plus an end-to-end model check.

Each differentiable op is checked against central finite differences on
random inputs in [-2, 2] at tolerance 1e-6; compositions that pass through
softmax or log use 1e-4, as does the full model loss.

For the model check, parameters are re-drawn at a larger scale than the
training init: with tiny weights many true gradients sit at 1e-10 and below,
where the difference quotient is pure roundoff, and attention argmax margins
are so thin that the discrete copy indicators flip under perturbation.
Re-scaling makes the comparison numerically meaningful without changing
what is being verified.

``inject_fault`` corrupts the named op's adjoint (scales it by 1.02) for the
duration of its check, to prove the harness actually detects wrong
gradients.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from . import model as M
from . import trainer as TR
from .corpus import ParallelPair

OP_TOL = 1e-6
COMPOSITE_TOL = 1e-4
MODEL_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.error < self.tolerance


@contextlib.contextmanager
def _corrupted_adjoint(op_name: str):
    """Scale the named op's recorded adjoints by 1.02 (a wrong gradient)."""
    original_record = T.Tape.record

    def patched(self, out, inputs, adjoint, kind):
        if kind == op_name:
            def bad(g, _adj=adjoint):
                return tuple(None if gi is None else gi * 1.02 for gi in _adj(g))

            adjoint = bad
        original_record(self, out, inputs, adjoint, kind)

    T.Tape.record = patched
    try:
        yield
    finally:
        T.Tape.record = original_record


def _op_cases(rng: np.random.Generator) -> list[tuple[str, Callable, T.Tensor, float]]:
    def rt(shape, lo=-2.0, hi=2.0):
        return T.Tensor(rng.uniform(lo, hi, shape))

    other = rt((3, 3))
    wide = rt((3, 6))
    right = rt((3, 4))
    rowv = rt((1, 3))
    drop_rng_seed = 99

    def dropout_fn(x):
        # fixed mask per evaluation so the checked function is deterministic
        return T.sum_all(T.mul(T.dropout(x, 0.4, True, np.random.default_rng(drop_rng_seed)), other))

    return [
        ("matmul", lambda x: T.sum_all(T.matmul(x, right)), rt((2, 3)), OP_TOL),
        ("transpose", lambda x: T.sum_all(T.mul(T.transpose(x), wide.__class__(wide.data[:3, :3].T))), rt((3, 3)), OP_TOL),
        ("softmax_rows", lambda x: T.sum_all(T.mul(T.softmax_rows(x), other)), rt((3, 3)), OP_TOL),
        ("add", lambda x: T.sum_all(T.mul(T.add(x, other), other)), rt((3, 3)), OP_TOL),
        ("sub", lambda x: T.sum_all(T.mul(T.sub(other, x), other)), rt((3, 3)), OP_TOL),
        ("mul", lambda x: T.sum_all(T.mul(T.mul(x, other), other)), rt((3, 3)), OP_TOL),
        ("neg", lambda x: T.sum_all(T.mul(T.neg(x), other)), rt((3, 3)), OP_TOL),
        ("one_minus", lambda x: T.sum_all(T.mul(T.one_minus(x), other)), rt((3, 3)), OP_TOL),
        ("sigmoid", lambda x: T.sum_all(T.mul(T.sigmoid(x), other)), rt((3, 3)), OP_TOL),
        ("tanh", lambda x: T.sum_all(T.mul(T.tanh(x), other)), rt((3, 3)), OP_TOL),
        ("log", lambda x: T.sum_all(T.mul(T.log(x), other)), rt((3, 3), 0.1, 2.0), COMPOSITE_TOL),
        ("concat", lambda x: T.sum_all(T.mul(T.concat(x, x, axis=1), wide)), rt((3, 3)), OP_TOL),
        ("stack_rows", lambda x: T.sum_all(T.mul(T.stack_rows([T.row(x, 0), T.row(x, 2), T.row(x, 1)]), other)), rt((3, 3)), OP_TOL),
        ("row", lambda x: T.sum_all(T.mul(T.row(x, 1), rowv)), rt((3, 3)), OP_TOL),
        ("gather_rows", lambda x: T.sum_all(T.mul(T.gather_rows(x, [0, 2, 2]), other)), rt((3, 3)), OP_TOL),
        ("add_rowvec", lambda x: T.sum_all(T.mul(T.add_rowvec(other, x), other)), rt((1, 3)), OP_TOL),
        ("pick", lambda x: T.pick(x, 2), rt((1, 4)), OP_TOL),
        ("scale", lambda x: T.sum_all(T.scale(x, 0.37)), rt((3, 3)), OP_TOL),
        ("dropout", dropout_fn, rt((3, 3)), OP_TOL),
        ("gru_cell", None, None, OP_TOL),  # placeholder, built below
        ("attend", None, None, COMPOSITE_TOL),
        ("softmax_log_chain", lambda x: T.neg(T.log(T.pick(T.softmax_rows(x), 1))), rt((1, 5)), COMPOSITE_TOL),
    ]


def _gru_case(rng: np.random.Generator):
    w = M.GRUWeights(3, 3, rng)
    for t in (w.wz, w.uz, w.wr, w.ur, w.wh, w.uh):
        t.data = rng.uniform(-1.5, 1.5, t.shape)
        t.requires_grad = False
    for t in (w.bz, w.br, w.bh):
        t.data = rng.uniform(-0.5, 0.5, t.shape)
        t.requires_grad = False
    h = T.Tensor(rng.uniform(-1, 1, (1, 3)))
    weight = T.Tensor(rng.uniform(-1, 1, (1, 3)))

    def f(x):
        return T.sum_all(T.mul(M.gru_cell(x, h, w), weight))

    return f, T.Tensor(rng.uniform(-2, 2, (1, 3)))


def _attend_case(rng: np.random.Generator):
    top = [T.Tensor(rng.uniform(-1, 1, (1, 4))) for _ in range(3)]
    weight = T.Tensor(rng.uniform(-1, 1, (1, 4)))

    def f(x):
        enc = M.EncoderState(list(top), [])
        _, c = M.attend(x, enc)
        return T.sum_all(T.mul(c, weight))

    return f, T.Tensor(rng.uniform(-1, 1, (1, 4)))


def run_op_checks(seed: int = 0, inject_fault: str | None = None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, f, x, tol in _op_cases(rng):
        if name == "gru_cell":
            f, x = _gru_case(rng)
        elif name == "attend":
            f, x = _attend_case(rng)
        ctx = _corrupted_adjoint(inject_fault) if inject_fault else contextlib.nullcontext()
        with ctx:
            err = T.grad_check(f, x, h=1e-5)
        results.append(CheckResult(name, err, tol))
    return results


def run_model_check(seed: int = 0, inject_fault: str | None = None) -> CheckResult:
    """Finite-difference check of the full two-part loss through a tiny model."""
    rng = np.random.default_rng(seed)
    hp = M.Hyperparams(
        layers=2, hidden=8, embedding_dim=8, max_len=6, use_bce_loss=True, trainable_embed_count=None
    )
    words = [f"w{i}" for i in range(16)]
    pairs = [
        ParallelPair("a", [words[i] for i in rng.integers(0, 16, 6)], [words[i] for i in rng.integers(0, 16, 5)])
        for _ in range(4)
    ]
    params = TR.build_model(pairs, hp, np.random.default_rng(seed + 1))
    redraw = np.random.default_rng(seed + 2)
    for _, p in params.named_parameters():
        p.data = redraw.uniform(-0.8, 0.8, p.shape)
    prep = TR.prepare_pair(pairs[0].complex, pairs[0].simple, params)

    # freeze the copy indicators at the unperturbed argmax so the checked
    # function is the smooth branch of the loss
    enc = M.encode(prep.enc_ids, params)
    dists, trace = M.decode_train(enc, prep.tgt_out_ids, prep.tgt_feed_ids, params)
    kappa = M.copy_targets(prep.enc_tokens, trace, prep.tgt_tokens)
    cpy_id = params.output_vocab.cpy_id

    def f(_):
        enc = M.encode(prep.enc_ids, params)
        dists, _ = M.decode_train(enc, prep.tgt_out_ids, prep.tgt_feed_ids, params)
        return M.loss_total(dists, prep.tgt_out_ids, kappa, True, cpy_id)

    ctx = _corrupted_adjoint(inject_fault) if inject_fault else contextlib.nullcontext()
    worst = 0.0
    with ctx:
        for _name, p in params.named_parameters():
            worst = max(worst, T.grad_check(f, p, h=1e-5))
    return CheckResult("model_loss_total", worst, MODEL_TOL)


def run_all(seed: int = 0, inject_fault: str | None = None) -> list[CheckResult]:
    results = run_op_checks(seed, inject_fault)
    results.append(run_model_check(seed, inject_fault))
    return results
