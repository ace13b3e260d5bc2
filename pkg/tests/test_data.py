import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kiwiqe.data import (BAD, OK, DataFormatError, QEExample, Vocab, compute_ter, detokenize_target, parse_qe_tsv,
                         split_halves, split_word, tag_distribution, tokenize_pair, word_edit_distance, write_qe_tsv)
from oracles import levenshtein

words = st.text(alphabet="abcdefgh", min_size=1, max_size=11)


def tok(ex, **kw):
    return tokenize_pair(ex, Vocab.build([ex]), **kw)


def test_single_token_layout():
    t = tok(QEExample("en-de", "ok", "ok"))
    assert t.pieces == ["[cls]", "ok", "[sep]", "ok", "[eos]"]
    assert t.first_pieces.tolist() == [1] and t.cls_index == 0


def test_long_word_splits_into_pieces():
    assert split_word("hello") == ["hell", "##o"]
    t = tok(QEExample("en-de", "x", "hello"))
    assert t.pieces[1:3] == ["hell", "##o"]
    assert t.first_pieces.tolist() == [1]


def test_lp_prefix_precedes_both_segments():
    t = tok(QEExample("en-de", "a b", "c"), use_lp_prefix=True)
    assert t.pieces == ["[cls]", "<en-de>", "c", "[sep]", "<en-de>", "a", "b", "[eos]"]
    assert t.first_pieces.tolist() == [2]


def test_reference_segment_appended():
    ex = QEExample("en-de", "a", "b", reference="c d")
    t = tok(ex, use_reference=True)
    assert t.pieces[-5:] == ["[eos]", "[sep]", "c", "d", "[eos]"]


def test_empty_segment_rejected():
    with pytest.raises(DataFormatError):
        tok(QEExample("en-de", "", "a"))


def test_unknown_pieces_map_to_unk():
    v = Vocab.build([QEExample("l", "a", "b")])
    t = tokenize_pair(QEExample("l", "a", "zzz"), v)
    assert t.token_ids[1] == v.id("[unk]")


@settings(max_examples=100, deadline=None)
@given(st.lists(words, min_size=1, max_size=8), st.lists(words, min_size=1, max_size=8), st.integers(1, 5))
def test_tokenize_roundtrip_and_first_pieces(src, tgt, max_piece):
    ex = QEExample("xx-yy", src, tgt, tags=[OK] * len(tgt))
    t = tokenize_pair(ex, Vocab.build([ex], max_piece), max_piece=max_piece)
    assert detokenize_target(t) == list(tgt)
    fp = t.first_pieces
    assert len(fp) == len(ex.tags)
    assert np.all(np.diff(fp) > 0)
    lo, hi = t.target_span
    assert fp.min() >= lo and fp.max() < hi


def test_vocab_roundtrip(tmp_path):
    v = Vocab.build([QEExample("en-de", "hello world", "hallo welt")])
    v.save(tmp_path / "v.txt")
    assert Vocab.load(tmp_path / "v.txt").pieces == v.pieces


TSV_HEADER = "lp\tsrc\tmt\tscore\ttags\n"


def test_parse_single_row(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text(TSV_HEADER + "en-de\tHello\tHallo\t0.5\tOK\n", encoding="utf-8")
    (ex,) = parse_qe_tsv(p, "tags")
    assert ex.tags == (OK,) and ex.score == 0.5 and ex.target == ("Hallo",)


def test_parse_tag_mismatch_reports_line(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text(TSV_HEADER + "en-de\ta\tb\t0.1\tOK\nen-de\ta\tb\t0.5\tOK BAD\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match=":3:"):
        parse_qe_tsv(p, "tags")


@pytest.mark.parametrize("row,msg", [("en-de\ta\tb\n", "columns"), ("en-de\ta\tb\tx\n", "non-numeric")])
def test_parse_errors(tmp_path, row, msg):
    p = tmp_path / "a.tsv"
    p.write_text("lp\tsrc\tmt\tscore\n" + row, encoding="utf-8")
    with pytest.raises(DataFormatError, match=msg):
        parse_qe_tsv(p, "da")


def test_parse_hter_range_and_header(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("lp\tsrc\tmt\tscore\nen-de\ta\tb\t1.5\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="HTER"):
        parse_qe_tsv(p, "hter")
    assert parse_qe_tsv(p, "da")[0].score == 1.5
    p.write_text("lang\tsrc\tmt\tscore\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="header"):
        parse_qe_tsv(p)


def test_write_parse_roundtrip(tmp_path):
    exs = [QEExample("en-de", "a b", "c d e", 0.125, "OK BAD OK", "c e"), QEExample("en-zh", "x", "y", -1.0, "BAD", "y")]
    write_qe_tsv(tmp_path / "a.tsv", exs, with_ref=True)
    assert parse_qe_tsv(tmp_path / "a.tsv", "tags") == exs


def test_tag_distribution_matches_ratio_convention():
    tags = [OK] * 84 + [BAD] * 16
    exs = [QEExample("en-de", "s", " ".join(f"w{i}" for i in range(10)), tags=tags[i:i + 10]) for i in range(0, 100, 10)]
    assert tag_distribution(exs) == (0.84, 0.16)


def test_split_halves():
    data = list(range(1000))
    a, b = split_halves(data, seed=4)
    assert (len(a), len(b)) == (500, 500)
    assert sorted(a + b) == data and not set(a) & set(b)
    assert split_halves(data, seed=4) == (a, b)
    a3, b3 = split_halves([1, 2, 3], 0)
    assert (len(a3), len(b3)) == (2, 1)
    with pytest.raises(ValueError):
        split_halves([], 0)


def test_ter_examples():
    assert compute_ter("a b c".split(), "a b c".split()) == 0.0
    assert compute_ter("a x c".split(), "a b c".split()) == pytest.approx(1 / 3)
    assert compute_ter("p q r s t u".split(), "a b".split()) == 1.0
    with pytest.raises(ValueError):
        compute_ter(["a"], [])


def test_edit_distance_matches_recursive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a = tuple(rng.choice(list("abc"), size=rng.integers(0, 7)))
        b = tuple(rng.choice(list("abc"), size=rng.integers(0, 7)))
        assert word_edit_distance(a, b) == levenshtein(a, b)


def test_ter_monotone_in_substitutions():
    ref = list("abcdefgh")
    values = []
    for k in range(len(ref) + 1):
        hyp = ["z"] * k + ref[k:]
        values.append(compute_ter(hyp, ref))
    assert values == sorted(values)
