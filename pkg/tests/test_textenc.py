from __future__ import annotations

import pickle
from collections import Counter

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowsentry.flowdata import Dataset, FlowRecord
from flowsentry.textenc import ByteLevelBPE, FlowTextEncoder, PpfleConfig, encode_flow, ppfle_encode, train_bpe
from flowsentry.textenc.bpe import pretokenize
from flowsentry.textenc.ppfle import check_hash_collisions, encode_dataset, fit_stats, hash_token, value_bin


def _naive_bpe_merges(corpus: list[str], n_merges: int) -> list[tuple[bytes, bytes]]:
    """Reference trainer: rescans every word for every merge."""
    words = []
    for text in corpus:
        data = text.encode()
        i = 0
        while i < len(data):
            j = i + 1 if data[i:i + 1] == b" " else i
            if data[i:i + 1] == b" " and (j >= len(data) or data[j:j + 1] == b" "):
                while j < len(data) and data[j:j + 1] == b" ":
                    j += 1
            else:
                while j < len(data) and data[j:j + 1] != b" ":
                    j += 1
            words.append([data[k:k + 1] for k in range(i, j)])
            i = j
    merges = []
    for _ in range(n_merges):
        counts = Counter()
        for w in words:
            for a, b in zip(w, w[1:]):
                counts[(a, b)] += 1
        if not counts or max(counts.values()) < 2:
            break
        top = max(counts.values())
        best = sorted(p for p, c in counts.items() if c == top)[0]
        merges.append(best)
        for w in words:
            k = 0
            while k < len(w) - 1:
                if (w[k], w[k + 1]) == best:
                    w[k:k + 2] = [best[0] + best[1]]
                k += 1
    return merges


def _record(values, names=None):
    names = names or [f"x{i}" for i in range(len(values))]
    return FlowRecord(tuple(zip(names, values)), "Benign")


# -- PPFLE


def test_minimum_values_map_to_bin_zero():
    cfg = PpfleConfig(bins_per_feature=10, token_width=6)
    stats = {"x0": (0.0, 1.0), "x1": (-3.0, 3.0), "x2": (5.0, 9.0)}
    assert ppfle_encode(_record([0.0, -3.0, 5.0]), cfg, stats) == "f00b00 f01b00 f02b00"


def test_maximum_and_out_of_range_clamp_to_edge_bins():
    cfg = PpfleConfig(bins_per_feature=10, token_width=6)
    stats = {"x0": (0.0, 1.0), "x1": (0.0, 1.0)}
    assert ppfle_encode(_record([1.0, 7.0]), cfg, stats) == "f00b09 f01b09"
    assert ppfle_encode(_record([-5.0, 0.55]), cfg, stats) == "f00b00 f01b05"


def test_constant_feature_single_bin():
    assert value_bin(3.0, 2.0, 2.0, 32) == 0


def test_salt_changes_only_hashed_tokens():
    stats = {"x0": (0.0, 1.0)}
    rec = _record([0.5, "10.0.0.1"], ["x0", "src"])
    a = ppfle_encode(rec, PpfleConfig(16, 6, b"k1", {"src"}), stats).split()
    b = ppfle_encode(rec, PpfleConfig(16, 6, b"k2", {"src"}), stats).split()
    assert a[0] == b[0]
    assert a[1] != b[1]
    assert ppfle_encode(rec, PpfleConfig(16, 6, b"k1", {"src"}), stats).split() == a


def test_hash_token_is_truncated_hex():
    tok = hash_token("host-a", PpfleConfig(token_width=8, salt=b"s"))
    assert len(tok) == 8 and all(c in "0123456789abcdef" for c in tok)


def test_missing_stats_raises():
    with pytest.raises(ValueError, match="x1"):
        ppfle_encode(_record([0.1, 0.2]), PpfleConfig(), {"x0": (0.0, 1.0)})


def test_config_validation_and_roundtrip():
    with pytest.raises(ValueError):
        PpfleConfig(bins_per_feature=1)
    with pytest.raises(ValueError):
        PpfleConfig(token_width=1)
    with pytest.raises(ValueError):
        PpfleConfig(bins_per_feature=1000, token_width=6).check_schema(3)
    cfg = PpfleConfig(32, 8, b"\x01\xff", {"a", "b"})
    assert PpfleConfig.from_dict(cfg.to_dict()) == cfg


def test_categorical_must_be_hashed():
    ds = Dataset(pd.DataFrame({"p": ["tcp", "udp"], "n": [1.0, 2.0]}), ["a", "b"])
    with pytest.raises(ValueError, match="hash_token_features"):
        fit_stats(ds, PpfleConfig())
    assert set(fit_stats(ds, PpfleConfig(hash_token_features={"p"}))) == {"n"}


def test_collision_check_logs_not_raises(caplog):
    ds = Dataset(pd.DataFrame({"h": [f"v{i}" for i in range(300)]}), ["a"] * 300)
    # width 2 leaves 256 possible tokens, so 300 values must collide
    found = check_hash_collisions(ds, PpfleConfig(token_width=2, hash_token_features={"h"}))
    assert found
    assert "hash collision" in caplog.text


def test_vectorised_encoding_matches_per_record(blobs):
    cfg = PpfleConfig(bins_per_feature=16)
    stats = fit_stats(blobs, cfg)
    fast = encode_dataset(blobs, cfg, stats)
    assert fast == [ppfle_encode(r, cfg, stats) for r in blobs.records()]


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=5, max_size=5), min_size=1, max_size=40),
       st.binary(max_size=8))
def test_fixed_length_property(rows, salt):
    names = ["a", "b", "c", "d", "e"]
    df = pd.DataFrame(rows, columns=names)
    df["host"] = [f"h{int(abs(v))}" for v in df["a"]]
    ds = Dataset(df, ["x"] * len(df))
    cfg = PpfleConfig(32, 6, salt, {"host"})
    texts = encode_dataset(ds, cfg, fit_stats(ds, cfg))
    assert len({len(t) for t in texts}) == 1
    assert len(texts[0]) == 6 * 6 + 5


# -- BPE


def test_first_merge_on_single_pair_corpus():
    tok = train_bpe(["aaaa"], 260)
    assert tok.merges[0] == (b"a", b"a")


def test_vocab_below_alphabet_rejected():
    with pytest.raises(ValueError):
        train_bpe(["abc"], 258)
    with pytest.raises(ValueError):
        train_bpe([], 300)


def test_merges_match_bruteforce_on_ppfle_corpus():
    rng = np.random.default_rng(0)
    corpus = [" ".join(f"f{i:02d}b{rng.integers(0, 4):02d}" for i in range(6)) for _ in range(50)]
    tok = train_bpe(corpus, 330)
    ref = _naive_bpe_merges(corpus, len(tok.merges))
    assert tok.merges == ref
    # frequent whole tokens become single vocabulary entries
    words = Counter(w for text in corpus for w in pretokenize(text.encode()))
    for word, _ in words.most_common(5):
        assert len(tok.encode(word)) == 1


def test_training_deterministic():
    corpus = ["f00b01 f01b02", "f00b01 f01b03", "f00b02 f01b02"]
    assert train_bpe(corpus, 300) == train_bpe(list(corpus), 300)


def test_unk_never_emitted():
    tok = train_bpe(["hello world"] * 3, 280)
    ids = tok.encode(bytes(range(256)))
    assert tok.unk_id not in ids


@given(st.binary(max_size=256))
def test_roundtrip_arbitrary_bytes(data):
    tok = train_bpe(["f00b00 f01b31 hello hello", "abcabc"], 300)
    assert tok.decode_bytes(tok.encode(data)) == data


@given(st.text(max_size=64))
def test_roundtrip_text(s):
    tok = train_bpe(["the quick brown fox", "f00b00 f01b01"], 290)
    assert tok.decode(tok.encode(s)) == s


def test_save_load_and_pickle(tmp_path):
    tok = train_bpe(["f00b00 f01b01 f02b02"] * 4, 300)
    back = ByteLevelBPE.load(tok.save(tmp_path / "tok"))
    assert back == tok
    assert back.encode("f00b00 f01b01") == tok.encode("f00b00 f01b01")
    assert pickle.loads(pickle.dumps(tok)) == tok
    assert (tmp_path / "tok" / "vocab.txt").is_file() and (tmp_path / "tok" / "merges.txt").is_file()


# -- encode_flow


def test_empty_string_is_cls_then_pad():
    tok = train_bpe(["ab ab"], 260)
    ef = encode_flow("", tok, 8)
    assert ef.token_ids == (tok.cls_id,) + (tok.pad_id,) * 7
    assert ef.attention_mask == (1,) + (0,) * 7


def test_truncation_from_tail():
    tok = train_bpe(["zz"], 257 + 2)
    text = "abcdefghijklmnop"
    ef = encode_flow(text, tok, 5)
    assert len(ef.token_ids) == 5
    assert ef.token_ids[1:] == tuple(tok.encode(text)[:4])
    assert all(ef.attention_mask)
    with pytest.raises(ValueError):
        encode_flow("a", tok, 1)


def test_ppfle_strings_roundtrip_through_encode_flow():
    rng = np.random.default_rng(1)
    corpus = [" ".join(f"f{i:02d}b{rng.integers(0, 32):02d}" for i in range(4)) for _ in range(1000)]
    tok = train_bpe(corpus[:200], 400)
    for text in corpus:
        ef = encode_flow(text, tok, 64)
        assert ef.token_ids[0] == tok.cls_id
        assert tok.decode(ef.token_ids) == text


# -- FlowTextEncoder


def test_flow_text_encoder_shapes_and_persistence(tmp_path, blobs):
    enc = FlowTextEncoder(bins_per_feature=16, vocab_size=320, max_len=24).fit(blobs)
    ids = enc.transform(blobs)
    assert ids.shape == (len(blobs), 24)
    assert (ids[:, 0] == enc.tokenizer_.cls_id).all()
    assert ids.max() < enc.n_tokens
    back = FlowTextEncoder.load(enc.save(tmp_path / "enc"))
    np.testing.assert_array_equal(back.transform(blobs), ids)
    assert back.get_params() == enc.get_params()


def test_flow_text_encoder_schema_mismatch(blobs):
    enc = FlowTextEncoder(vocab_size=300).fit(blobs)
    with pytest.raises(ValueError):
        enc.transform(Dataset(blobs.X.iloc[:, :2], blobs.y))


def test_flow_text_encoder_accepts_frames(blobs):
    enc = FlowTextEncoder(vocab_size=300).fit(blobs.X)
    np.testing.assert_array_equal(enc.transform(blobs.X), enc.transform(blobs))
