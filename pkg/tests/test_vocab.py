import numpy as np
import pytest

import sentsimp.tensor as T
from sentsimp.vocab import (
    CPY,
    UNK,
    MixedEmbeddingTable,
    Vocabulary,
    build_mixed_table,
    build_output_vocab,
    load_pretrained,
    tokenize,
)


@pytest.fixture(autouse=True)
def fresh_tape():
    T.tape().clear()
    yield
    T.tape().clear()


class TestTokenize:
    def test_lowercase_and_punct(self):
        assert tokenize("The cat.") == ["the", "cat", "."]

    def test_empty(self):
        assert tokenize("") == []

    def test_comma_split(self):
        assert tokenize("Obama, who") == ["obama", ",", "who"]

    def test_deterministic_idempotent_on_own_output(self):
        toks = tokenize("The cat, the hat!")
        assert tokenize(" ".join(toks)) == toks


class TestBuildOutputVocab:
    def test_frequency_floor_boundary(self):
        sents = [["rare"]] * 7 + [["common"]] * 20
        v = build_output_vocab(sents, min_count=7)
        assert "rare" in v
        assert "common" in v

    def test_below_floor_excluded(self):
        sents = [["almost"]] * 6 + [["common"]] * 20
        v = build_output_vocab(sents, min_count=7)
        assert "almost" not in v
        assert v.id_of("almost") == v.unk_id

    def test_tie_break_at_cutoff(self):
        sents = [["zeta"]] * 8 + [["alpha"]] * 8 + [["top"]] * 30
        v = build_output_vocab(sents, max_size=2, min_count=7)
        assert "top" in v and "alpha" in v
        assert "zeta" not in v

    def test_specials_and_cpy(self):
        v = build_output_vocab([["a"]] * 10)
        assert v.pad_id == 0 and v.bos_id == 1 and v.eos_id == 2 and v.unk_id == 3
        assert v.cpy_id == 4 and v.has_cpy

    def test_size_bound(self):
        rng = np.random.default_rng(0)
        sents = [[f"w{i}" for i in rng.integers(0, 50, 8)] for _ in range(200)]
        v = build_output_vocab(sents, max_size=10, min_count=1)
        assert v.size <= 10 + 5

    def test_deterministic_under_input_order(self):
        rng = np.random.default_rng(1)
        sents = [[f"w{i}" for i in rng.integers(0, 30, 6)] for _ in range(100)]
        v1 = build_output_vocab(sents, min_count=2)
        v2 = build_output_vocab(list(reversed(sents)), min_count=2)
        assert v1.tokens == v2.tokens

    def test_roundtrip(self):
        v = build_output_vocab([["a", "b", "c"]] * 10, min_count=1)
        for i in range(v.size):
            assert v.id_of(v.token_of(i)) == i
        for tok in v.tokens:
            assert v.token_of(v.id_of(tok)) == tok


class TestLoadPretrained:
    def _write(self, tmp_path, lines):
        p = tmp_path / "emb.txt"
        p.write_text("\n".join(lines) + ("\n" if lines else ""))
        return str(p)

    def test_basic_line(self, tmp_path):
        vec = " ".join(["0.1"] * 300)
        table = load_pretrained(self._write(tmp_path, [f"cat {vec}"]))
        assert set(table) == {"cat"}
        assert table["cat"].shape == (300,)
        assert table["cat"][0] == pytest.approx(0.1)

    def test_empty_file(self, tmp_path):
        assert load_pretrained(self._write(tmp_path, [])) == {}

    def test_wrong_length_names_line(self, tmp_path):
        vec = " ".join(["0.1"] * 299)
        with pytest.raises(ValueError, match=":1:"):
            load_pretrained(self._write(tmp_path, [f"cat {vec}"]))

    def test_duplicate_first_wins_with_warning(self, tmp_path):
        v1 = " ".join(["1.0"] * 4)
        v2 = " ".join(["2.0"] * 4)
        path = self._write(tmp_path, [f"cat {v1}", f"cat {v2}"])
        with pytest.warns(UserWarning, match="duplicate"):
            table = load_pretrained(path, dim=4)
        assert table["cat"][0] == 1.0


def _mk_table(trainable_count=2, extra=(), pretrained=None, hidden=8, dim=4):
    sents = [["aa", "bb", "aa", "cc"], ["aa", "bb", "dd"]]
    return build_mixed_table(
        sents,
        pretrained,
        trainable_count,
        hidden=hidden,
        embedding_dim=dim,
        rng=np.random.default_rng(0),
        extra_tokens=extra,
    )


class TestMixedTable:
    def test_partition_and_priority(self):
        pre = {"aa": np.ones(4), "zz": np.full(4, 2.0), "yy": np.full(4, 3.0)}
        vocab, table = _mk_table(trainable_count=2, pretrained=pre)
        # aa, bb most frequent -> trainable; aa also pretrained -> trainable wins
        aa_id = vocab.id_of("aa")
        assert table.row_block[aa_id] == 0
        zz_id = vocab.id_of("zz")
        assert table.row_block[zz_id] == 1
        np.testing.assert_array_equal(table.fixed.data[table.row_index[zz_id]], np.full(4, 2.0))

    def test_unk_is_trainable(self):
        vocab, table = _mk_table(pretrained={"zz": np.zeros(4)})
        assert table.row_block[vocab.unk_id] == 0

    def test_every_id_resolves(self):
        pre = {"zz": np.zeros(4), "yy": np.ones(4)}
        vocab, table = _mk_table(trainable_count=1, pretrained=pre)
        out = table.embed(list(range(vocab.size)))
        assert out.shape == (vocab.size, 8)

    def test_all_trainable_when_no_pretrained(self):
        vocab, table = _mk_table(trainable_count=None)
        assert table.fixed.shape[0] == 0
        assert all(table.row_block[i] == 0 for i in range(vocab.size))

    def test_zero_projection_gives_zero_output(self):
        vocab, table = _mk_table()
        table.proj_w.data[:] = 0.0
        table.proj_b.data[:] = 0.0
        out = table.embed([0, 1, 2])
        np.testing.assert_array_equal(out.data, np.zeros((3, 8)))

    def test_fixed_rows_get_no_gradient(self):
        pre = {"zz": np.full(4, 0.5)}
        vocab, table = _mk_table(trainable_count=1, pretrained=pre)
        zz = vocab.id_of("zz")
        out = table.embed([zz])
        T.backward(T.sum_all(out))
        assert table.fixed.grad is None
        assert table.proj_w.grad is not None

    def test_trainable_row_used_twice_accumulates(self):
        vocab, table = _mk_table()
        aa = vocab.id_of("aa")
        out = table.embed([aa, aa])
        T.backward(T.sum_all(out))
        single = table.proj_w.data.sum(axis=1)  # d(sum)/d(row) for one use
        np.testing.assert_allclose(table.trainable.grad[table.row_index[aa]], 2 * single)

    def test_extra_row_addressable(self):
        vocab, table = _mk_table(extra=(CPY,))
        cid = table.extra_id(CPY)
        assert cid == vocab.size
        out = table.embed([cid])
        assert out.shape == (1, 8)

    def test_empty_ids(self):
        _, table = _mk_table()
        assert table.embed([]).shape == (0, 8)

    def test_out_of_range(self):
        vocab, table = _mk_table()
        with pytest.raises(IndexError):
            table.embed([vocab.size + 5])


class TestVocabularyBasics:
    def test_no_cpy_on_input_side(self):
        vocab, _ = _mk_table()
        assert not vocab.has_cpy
        with pytest.raises(ValueError):
            vocab.cpy_id

    def test_unknown_maps_to_unk(self):
        vocab, _ = _mk_table()
        assert vocab.id_of("nonexistent") == vocab.unk_id
        assert vocab.token_of(vocab.unk_id) == UNK
