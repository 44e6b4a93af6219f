"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Heavy fixtures (the trained copy-task model) are session-scoped and shared
between criteria; per-criterion runtime budgets assume that sharing.
Schedules, corpus shape parameters and thresholds not fixed by the criteria
are pinned here so every run is reproducible.
"""

import math
import time

import numpy as np
import pytest

import sentsimp.tensor as T
import sentsimp.model as M
import sentsimp.trainer as TR
from sentsimp.aligner import align, brute_force_align, score_alignment
from sentsimp.cli import main as cli_main
from sentsimp.corpus import (
    SynthConfig,
    alignment_matrix,
    split_by_article,
    synth_generate,
)
from sentsimp.gradcheck import run_model_check, run_op_checks
from sentsimp.metrics import (
    ConfusionRecord,
    bleu,
    copy_change_confusion,
    edit_distance_words,
    flesch,
    rouge_l,
)
from sentsimp.trainer import AdamState, Checkpoint, TrainConfig, adam_step, prepare_pair, train
from sentsimp.vocab import load_pretrained


def _report(criterion: str, body):
    start = time.time()
    try:
        detail = body() or ""
        print(f"\nACCEPTANCE {criterion} PASS {detail} [{time.time() - start:.0f}s]")
    except Exception as exc:
        print(f"\nACCEPTANCE {criterion} FAIL {exc} [{time.time() - start:.0f}s]")
        raise


# ---------------------------------------------------------------------------
# shared copy-task setup (criteria 5, 6, 7)

COPY_TASK_CFG = SynthConfig(
    vocab_size=200,
    n_pairs=2400,
    copy_frac=0.9,
    sub_frac=0.1,
    dict_size=12,
    min_len=4,
    max_len=9,
    pairs_per_article=10,
    zipf_exponent=2.0,
    zipf_offset=6.0,
    markov_branch=4,
    seed=3,
)
COPY_TASK_SPLIT = (0.8334, 0.0833, 0.0833)  # 2000 / 200 / 200 pairs
COPY_TASK_HP = dict(layers=2, hidden=64, embedding_dim=64, max_len=50, trainable_embed_count=None)


@pytest.fixture(scope="session")
def copy_corpus():
    sc = synth_generate(COPY_TASK_CFG)
    corpus = split_by_article(sc.corpus, COPY_TASK_SPLIT, seed=1)
    assert len(corpus.subset("train")) == 2000
    assert len(corpus.subset("test")) == 200
    return sc, corpus


@pytest.fixture(scope="session")
def copy_checkpoint(copy_corpus):
    """Criterion-5 training: two phases of up to 15 epochs each (<= 30 total)."""
    _, corpus = copy_corpus
    hp = M.Hyperparams(use_bce_loss=True, **COPY_TASK_HP)
    config = TrainConfig(
        batch_size=8, dropout=0.0, validation_sample=200, patience=5,
        max_epochs=15, seed=5, lr=0.005,
    )
    return train(corpus, hp, config)


def _decode_test_split(ck, corpus, use_copy_feed=True):
    params = ck.build_model("best")
    params.hp.use_copy_feed = use_copy_feed
    cands, refs = [], []
    n_cpy = n_tok = 0
    for pair in corpus.subset("test"):
        prep = prepare_pair(pair.complex, pair.simple, params)
        toks, trace = M.decode_generate(prep.enc_ids, prep.enc_tokens, params)
        cands.append(toks)
        refs.append(pair.simple)
        for e in trace.emitted:
            if e == params.output_vocab.eos_id:
                continue
            n_tok += 1
            n_cpy += e == params.output_vocab.cpy_id
    return bleu(cands, refs)[3], (n_cpy / n_tok if n_tok else 0.0)


# ---------------------------------------------------------------------------


def test_criterion_1_gradient_correctness():
    def body():
        op_results = run_op_checks(seed=0)
        for r in op_results:
            assert r.error < r.tolerance, f"{r.name}: {r.error:.3e} >= {r.tolerance:g}"
        model_result = run_model_check(seed=0)
        assert model_result.error < 1e-4, f"model: {model_result.error:.3e}"
        worst_op = max(r.error for r in op_results)
        return f"worst_op_err={worst_op:.2e} model_err={model_result.error:.2e}"

    _report("criterion-1-gradients", body)


def test_criterion_2_aligner_oracle_equivalence():
    def body():
        rng = np.random.default_rng(2024)
        vocab = [f"w{i}" for i in range(6)]
        for trial in range(300):
            d_comp, d_simp = rng.integers(0, 5), rng.integers(0, 5)
            comp = [[vocab[k] for k in rng.integers(0, 6, rng.integers(1, 9))] for _ in range(d_comp)]
            simp = [[vocab[k] for k in rng.integers(0, 6, rng.integers(1, 9))] for _ in range(d_simp)]
            gamma = float(rng.choice([-50.0, 0.0, 10.0, 30.0]))
            res = align(comp, simp, gamma)
            best, _ = brute_force_align(comp, simp, gamma)
            assert res.score == best, f"trial {trial}: {res.score} != {best}"
            achieved = score_alignment(res, comp, simp, gamma)
            assert abs(achieved - res.score) <= 1e-9 * max(1.0, abs(res.score)), (
                f"trial {trial}: backtrack achieves {achieved}, claimed {res.score}"
            )
        return "300/300 exact"

    _report("criterion-2-aligner-oracle", body)


def test_criterion_3_metric_hand_cases():
    def body():
        sents = [["a", "b", "c", "d", "e"], ["p", "q", "r", "s"]]
        assert bleu(sents, sents) == (100.0, 100.0, 100.0, 100.0)
        b1 = bleu([["the", "cat"]], [["the", "cat", "sat"]])[0]
        assert abs(b1 - 60.65) < 0.01, f"B1 {b1}"
        rl = rouge_l([["a", "b", "c", "d"]], [["a", "c", "d"]])
        assert abs(rl - 85.71) < 0.01, f"rouge {rl}"
        fl = flesch([["the", "cat", "sat"]])
        assert abs(fl - 119.19) < 1e-6, f"flesch {fl}"

        rng = np.random.default_rng(5)
        vocab = ["a", "b", "c"]

        def seq():
            return [vocab[i] for i in rng.integers(0, 3, rng.integers(0, 7))]

        violations = 0
        for _ in range(1000):
            x, y, z = seq(), seq(), seq()
            dxy = edit_distance_words(x, y)
            if dxy != edit_distance_words(y, x):
                violations += 1
            if (dxy == 0) != (x == y):
                violations += 1
            if dxy > edit_distance_words(x, z) + edit_distance_words(z, y):
                violations += 1
        assert violations == 0, f"{violations} metric-axiom violations"
        return "all hand cases and 1000 axiom triples"

    _report("criterion-3-metric-hand-cases", body)


def test_criterion_4_adam():
    def body():
        for g in (0.37, -2.5, 1e-4, 123.0):
            p = T.Tensor([[1.0]], requires_grad=True)
            named = [("p", p)]
            state = AdamState(named, lr=0.001)
            p.grad = np.array([[g]])
            adam_step(named, state)
            expected = 1.0 - 0.001 * g / (math.sqrt(g * g) + 1e-8)
            assert abs(p.data[0, 0] - expected) < 1e-9, f"g={g}"

        p = T.Tensor([[1.0, -1.0]], requires_grad=True)
        named = [("p", p)]
        state = AdamState(named, lr=0.001)
        losses = []
        for step in range(20000):
            x, y = p.data[0]
            p.grad = np.array([[x, 3.0 * y]])
            adam_step(named, state)
            x, y = p.data[0]
            losses.append(0.5 * (x * x + 3.0 * y * y))
            if losses[-1] < 1e-6:
                break
        assert losses[-1] < 1e-6, "did not reach 1e-6 within 20k steps"
        for k in range(51, len(losses)):
            assert losses[k] <= losses[k - 1], f"loss rose at step {k}"
        return f"optimum reached at step {len(losses)}"

    _report("criterion-4-adam", body)


def test_criterion_5_copy_task(copy_corpus, copy_checkpoint):
    def body():
        _, corpus = copy_corpus
        b4, cpy_rate = _decode_test_split(copy_checkpoint, corpus)
        assert b4 >= 95.0, f"BLEU-4 {b4:.2f} < 95"
        assert cpy_rate >= 0.5, f"copy-path rate {cpy_rate:.3f} < 0.5"
        return f"B4={b4:.2f} cpy_rate={cpy_rate:.3f}"

    _report("criterion-5-copy-task", body)


ABLATION_SEEDS = (11, 12, 13)


def _ablation_stats(corpus):
    """Train the two model families per seed; decode each with feeding on/off."""
    stats = {"s4": [], "s4_nofeed": [], "bce": [], "bce_nofeed": [], "cpy_bce": [], "cpy_bce_nofeed": []}
    for seed in ABLATION_SEEDS:
        tc = TrainConfig(batch_size=8, dropout=0.0, validation_sample=200,
                         patience=3, max_epochs=8, seed=seed, lr=0.005)
        ck_s4 = train(corpus, M.Hyperparams(use_bce_loss=False, **COPY_TASK_HP), tc)
        b4, _ = _decode_test_split(ck_s4, corpus, use_copy_feed=True)
        b4_nf, _ = _decode_test_split(ck_s4, corpus, use_copy_feed=False)
        stats["s4"].append(b4)
        stats["s4_nofeed"].append(b4_nf)

        tc2 = TrainConfig(batch_size=8, dropout=0.0, validation_sample=200,
                          patience=3, max_epochs=8, phase2_max_epochs=4, seed=seed, lr=0.005)
        ck_bce = train(corpus, M.Hyperparams(use_bce_loss=True, **COPY_TASK_HP), tc2)
        b4_b, cpy_b = _decode_test_split(ck_bce, corpus, use_copy_feed=True)
        b4_bn, cpy_bn = _decode_test_split(ck_bce, corpus, use_copy_feed=False)
        stats["bce"].append(b4_b)
        stats["bce_nofeed"].append(b4_bn)
        stats["cpy_bce"].append(cpy_b)
        stats["cpy_bce_nofeed"].append(cpy_bn)
    return {k: float(np.mean(v)) for k, v in stats.items()}


@pytest.fixture(scope="session")
def ablation_stats(copy_corpus):
    _, corpus = copy_corpus
    return _ablation_stats(corpus)


def test_criterion_6a_feed_ablation(ablation_stats):
    def body():
        s = ablation_stats
        assert s["s4"] >= s["s4_nofeed"], f"S4 {s['s4']:.2f} < S4-feed {s['s4_nofeed']:.2f}"
        return f"S4={s['s4']:.2f} S4-feed={s['s4_nofeed']:.2f}"

    _report("criterion-6a-feed", body)


def test_criterion_6b_bce_ablation(ablation_stats):
    def body():
        s = ablation_stats
        assert s["bce"] >= s["s4"], f"S4+bce {s['bce']:.2f} < S4 {s['s4']:.2f}"
        return f"S4+bce={s['bce']:.2f} S4={s['s4']:.2f}"

    _report("criterion-6b-bce", body)


def test_criterion_6c_bce_feed_pathology(ablation_stats):
    def body():
        s = ablation_stats
        ratio = s["cpy_bce_nofeed"] / max(s["cpy_bce"], 1e-12)
        assert ratio >= 3.0, (
            f"cpy frequency ratio {ratio:.2f} < 3 "
            f"(bce-feed {s['cpy_bce_nofeed']:.3f} vs bce {s['cpy_bce']:.3f})"
        )
        return f"ratio={ratio:.2f}"

    _report("criterion-6c-pathology", body)


def test_criterion_7_gt_alignment_confusion(copy_corpus, copy_checkpoint):
    def body():
        sc, corpus = copy_corpus
        params = copy_checkpoint.build_model("best")
        test_pairs = corpus.subset("test")
        # map test pairs back to their generator index for the gold alignments
        index_of = {id(p): i for i, p in enumerate(sc.corpus.pairs)}
        records = []
        expected_aligned = 0
        for pair in test_pairs:
            gen_ix = index_of[id(pair)]
            gold = sc.alignments[gen_ix]
            prep = prepare_pair(pair.complex, pair.simple, params)
            gt = alignment_matrix(gold, len(prep.tgt_out_ids), len(prep.enc_ids))
            enc = M.encode(prep.enc_ids, params)
            dists, trace = M.decode_with_gt_alignments(
                enc, prep.tgt_out_ids, prep.tgt_feed_ids, gt, params
            )
            T.tape().clear()
            is_cpy, surface = [], []
            for i, dist in enumerate(dists):
                emitted = int(np.argmax(dist.data[0]))
                cpy = emitted == params.output_vocab.cpy_id
                is_cpy.append(cpy)
                if cpy and trace.jstar[i] is not None:
                    surface.append(prep.enc_tokens[trace.jstar[i]])
                else:
                    surface.append(params.output_vocab.token_of(emitted))
            tgt_no_eos = prep.tgt_tokens[:-1]
            valid_gold = [
                (i, j) for i, j in gold if i < len(tgt_no_eos) and j < len(prep.enc_tokens)
            ]
            expected_aligned += len({i for i, _ in valid_gold})
            records.append(
                ConfusionRecord(prep.enc_tokens, tgt_no_eos, is_cpy, surface, valid_gold)
            )
        counts, change_acc = copy_change_confusion(records)
        assert counts.sum() == expected_aligned, f"{counts.sum()} != {expected_aligned}"
        copy_copy_share = counts[0, 0] / counts.sum()
        assert copy_copy_share > 0.8, f"(copy,copy) share {copy_copy_share:.3f} <= 0.8"
        return (
            f"counts={counts.tolist()} copy_copy_share={copy_copy_share:.3f} "
            f"change_word_accuracy={change_acc:.3f}"
        )

    _report("criterion-7-gt-alignments", body)


def test_criterion_8_determinism_and_persistence(tmp_path):
    def body():
        cfg = SynthConfig(vocab_size=40, n_pairs=80, copy_frac=0.8, sub_frac=0.2, dict_size=4,
                          min_len=3, max_len=6, pairs_per_article=4, seed=3)
        corpus = split_by_article(synth_generate(cfg).corpus, (0.75, 0.25, 0.0), seed=1)
        hp = M.Hyperparams(layers=2, hidden=12, embedding_dim=12, max_len=8,
                           use_bce_loss=True, trainable_embed_count=None)
        config = TrainConfig(batch_size=16, dropout=0.1, validation_sample=16,
                             patience=99, max_epochs=2, seed=7, lr=0.005)

        blobs = []
        for k in range(2):
            path = str(tmp_path / f"seed{k}.bin")
            train(corpus, hp, config).save(path)
            blobs.append(open(path, "rb").read())
        assert blobs[0] == blobs[1], "same seed produced different checkpoint bytes"

        p1, p2 = str(tmp_path / "rt1.bin"), str(tmp_path / "rt2.bin")
        ck = train(corpus, hp, config)
        ck.save(p1)
        Checkpoint.load(p1).save(p2)
        assert open(p1, "rb").read() == open(p2, "rb").read(), "round-trip not lossless"

        part = train(corpus, hp, config, interrupt_after_total_epochs=2)
        p_part = str(tmp_path / "part.bin")
        part.save(p_part)
        resumed = train(corpus, hp, config, resume_from=Checkpoint.load(p_part))
        p_res = str(tmp_path / "res.bin")
        resumed.save(p_res)
        assert open(p_res, "rb").read() == blobs[0], "resumed run differs from uninterrupted"
        return "byte-identical, lossless, resume-equal"

    _report("criterion-8-determinism", body)


SWEEP_COUNTS = (2, 200, 1000)


def test_criterion_9_embedding_sweep(tmp_path, capsys):
    def body():
        dim = 24
        cfg = SynthConfig(vocab_size=120, n_pairs=600, copy_frac=0.9, sub_frac=0.1, dict_size=8,
                          zipf_exponent=2.0, zipf_offset=6.0, markov_branch=4, seed=6)
        sc = synth_generate(cfg)
        corpus_path = str(tmp_path / "sweep.tsv")
        from sentsimp.corpus import write_parallel_tsv

        write_parallel_tsv(sc.corpus, corpus_path)

        # synthetic pre-trained vectors covering every corpus token plus extras
        words = sorted({t for p in sc.corpus.pairs for t in p.complex + p.simple})
        extra = [f"xtra{i}" for i in range(300)]
        rng = np.random.default_rng(17)
        emb_path = str(tmp_path / "vectors.txt")
        with open(emb_path, "w") as fh:
            for w in words + extra:
                vec = " ".join(repr(float(v)) for v in rng.uniform(-0.5, 0.5, dim))
                fh.write(f"{w} {vec}\n")

        table = {}
        for count in SWEEP_COUNTS:
            ck_path = str(tmp_path / f"sweep{count}.bin")
            code = cli_main([
                "train", corpus_path, "--checkpoint", ck_path,
                "--hidden", "32", "--embedding-dim", str(dim), "--max-len", "50",
                "--trainable-embeddings", str(count), "--pretrained", emb_path,
                "--batch-size", "8", "--dropout", "0.0", "--max-epochs", "4",
                "--lr", "0.005", "--patience", "9", "--seed", "21",
                "--validation-sample", "100", "--val-frac", "0.1", "--test-frac", "0.1",
            ])
            capsys.readouterr()
            assert code == 0, f"sweep run count={count} failed"
            ck = Checkpoint.load(ck_path)
            params = ck.build_model("best")
            split = split_by_article(sc.corpus, (0.8, 0.1, 0.1), seed=21)
            cands, refs = [], []
            for pair in split.subset("test"):
                prep = prepare_pair(pair.complex, pair.simple, params)
                toks, _ = M.decode_generate(prep.enc_ids, prep.enc_tokens, params)
                cands.append(toks)
                refs.append(pair.simple)
            table[count] = bleu(cands, refs)[3]

            if count == 2:
                pre = load_pretrained(emb_path, dim=dim)
                fixed = params.enc_table.fixed.data
                vocab = params.input_vocab
                checked = 0
                for row_id in range(vocab.size):
                    if params.enc_table.row_block[row_id] == 1:
                        tok = vocab.token_of(row_id)
                        np.testing.assert_array_equal(
                            fixed[params.enc_table.row_index[row_id]], pre[tok]
                        )
                        checked += 1
                assert checked > 100, "fixed block unexpectedly small"

        lines = [f"sweep_trainable_{c}_b4={table[c]!r}" for c in SWEEP_COUNTS]
        print("\n" + "\n".join(lines))
        return " ".join(lines)

    _report("criterion-9-embedding-sweep", body)
