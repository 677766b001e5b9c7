"""Byte-level byte-pair-encoding tokenizer.

The base alphabet is the 256 byte values, so every input is representable
and ``decode(encode(s)) == s`` holds for arbitrary bytes.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

SPECIAL_TOKENS = ("<pad>", "<cls>", "<unk>")
FORMAT = "byte-level-bpe/1"

# Word = optional leading space + run of non-space bytes, or a run of spaces.
_PRETOKEN = re.compile(rb" ?[^ ]+| +")


def _bytes_to_unicode() -> dict[int, str]:
    """Printable stand-ins for every byte (the usual GPT-2 table), used only
    to write vocab/merges files as plain text."""
    keep = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(
        range(ord("®"), ord("ÿ") + 1)
    )
    chars = keep[:]
    n = 0
    for b in range(256):
        if b not in keep:
            keep.append(b)
            chars.append(256 + n)
            n += 1
    return {b: chr(c) for b, c in zip(keep, chars)}


BYTE_TO_CHAR = _bytes_to_unicode()
CHAR_TO_BYTE = {c: b for b, c in BYTE_TO_CHAR.items()}


def _show(token: bytes) -> str:
    return "".join(BYTE_TO_CHAR[b] for b in token)


def _unshow(text: str) -> bytes:
    return bytes(CHAR_TO_BYTE[c] for c in text)


def pretokenize(data: bytes) -> list[bytes]:
    return _PRETOKEN.findall(data)


def _as_bytes(text: str | bytes) -> bytes:
    return text if isinstance(text, bytes) else text.encode("utf-8")


def _merge_word(word: tuple[bytes, ...], pair: tuple[bytes, bytes]) -> tuple[bytes, ...]:
    a, b = pair
    out = []
    i = 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == a and word[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


class ByteLevelBPE:
    """Tokenizer defined entirely by its ordered merge list.

    Ids 0-255 are the raw bytes, followed by the special tokens
    (``<pad>``, ``<cls>``, ``<unk>``), followed by one id per merged token
    in merge order. A merge whose result already exists reuses that id.
    """

    def __init__(self, merges: Sequence[tuple[bytes, bytes]] = (), specials: Sequence[str] = SPECIAL_TOKENS):
        self.merges = [(bytes(a), bytes(b)) for a, b in merges]
        self.specials = tuple(specials)
        self.id_to_token: list[bytes | str] = [bytes([i]) for i in range(256)]
        self.id_to_token.extend(self.specials)
        self.token_to_id: dict[bytes, int] = {bytes([i]): i for i in range(256)}
        for a, b in self.merges:
            tok = a + b
            if tok not in self.token_to_id:
                self.token_to_id[tok] = len(self.id_to_token)
                self.id_to_token.append(tok)
        self._ranks = {pair: r for r, pair in enumerate(self.merges)}
        self._encode_word = lru_cache(maxsize=1 << 16)(self._encode_word_uncached)

    def __reduce__(self):
        # the per-instance word cache is not picklable; rebuild from merges
        return type(self), (self.merges, self.specials)

    # -- special ids
    @property
    def pad_id(self) -> int:
        return 256 + self.specials.index("<pad>")

    @property
    def cls_id(self) -> int:
        return 256 + self.specials.index("<cls>")

    @property
    def unk_id(self) -> int:
        return 256 + self.specials.index("<unk>")

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token)

    @property
    def special_ids(self) -> dict[str, int]:
        return {s: 256 + i for i, s in enumerate(self.specials)}

    # -- training
    @classmethod
    def train(cls, corpus: Iterable[str | bytes], vocab_size: int, seed: int = 0,
              specials: Sequence[str] = SPECIAL_TOKENS) -> "ByteLevelBPE":
        """Greedy BPE training.

        Repeatedly merges the most frequent adjacent symbol pair (ties go to
        the lexicographically smallest pair) until ``vocab_size`` tokens
        exist or no pair occurs at least twice. Pairs never span word
        boundaries. ``seed`` is accepted for interface symmetry; the
        procedure is fully deterministic.
        """
        corpus = list(corpus)
        min_size = 256 + len(specials)
        if vocab_size < min_size:
            raise ValueError(f"vocab_size must be >= {min_size} (bytes + specials), got {vocab_size}")
        if not corpus:
            raise ValueError("corpus is empty")
        words: Counter[tuple[bytes, ...]] = Counter()
        for text in corpus:
            for w in pretokenize(_as_bytes(text)):
                words[tuple(bytes([b]) for b in w)] += 1

        merges: list[tuple[bytes, bytes]] = []
        known = {bytes([i]) for i in range(256)}
        size = min_size
        while size < vocab_size:
            pairs: Counter[tuple[bytes, bytes]] = Counter()
            for word, freq in words.items():
                for pair in zip(word, word[1:]):
                    pairs[pair] += freq
            if not pairs:
                break
            best_count = max(pairs.values())
            if best_count < 2:
                break
            best = min(p for p, c in pairs.items() if c == best_count)
            merges.append(best)
            if best[0] + best[1] not in known:
                known.add(best[0] + best[1])
                size += 1
            merged: Counter[tuple[bytes, ...]] = Counter()
            for word, freq in words.items():
                merged[_merge_word(word, best) if len(word) > 1 else word] += freq
            words = merged
        return cls(merges, specials)

    # -- encode / decode
    def _encode_word_uncached(self, word: bytes) -> tuple[int, ...]:
        parts = tuple(bytes([b]) for b in word)
        while len(parts) > 1:
            ranked = [(self._ranks.get(p, None), p) for p in zip(parts, parts[1:])]
            ranked = [rp for rp in ranked if rp[0] is not None]
            if not ranked:
                break
            parts = _merge_word(parts, min(ranked)[1])
        return tuple(self.token_to_id[p] for p in parts)

    def encode(self, text: str | bytes) -> list[int]:
        ids: list[int] = []
        for word in pretokenize(_as_bytes(text)):
            ids.extend(self._encode_word(word))
        return ids

    def decode_bytes(self, ids: Iterable[int], skip_special: bool = True) -> bytes:
        out = []
        for i in ids:
            tok = self.id_to_token[int(i)]
            if isinstance(tok, str):
                if skip_special:
                    continue
                tok = tok.encode("utf-8")
            out.append(tok)
        return b"".join(out)

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        return self.decode_bytes(ids, skip_special).decode("utf-8", errors="surrogateescape")

    # -- persistence
    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "vocab.txt", "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.id_to_token):
                fh.write(f"{tok if isinstance(tok, str) else _show(tok)} {i}\n")
        with open(directory / "merges.txt", "w", encoding="utf-8") as fh:
            for a, b in self.merges:
                fh.write(f"{_show(a)} {_show(b)}\n")
        config = {"format": FORMAT, "vocab_size": self.vocab_size, "specials": self.special_ids}
        (directory / "tokenizer.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "ByteLevelBPE":
        directory = Path(directory)
        config = json.loads((directory / "tokenizer.json").read_text())
        if config.get("format") != FORMAT:
            raise ValueError(f"unsupported tokenizer format {config.get('format')!r}")
        specials = [s for s, _ in sorted(config["specials"].items(), key=lambda kv: kv[1])]
        merges = []
        for line in (directory / "merges.txt").read_text(encoding="utf-8").splitlines():
            if line:
                a, b = line.split(" ")
                merges.append((_unshow(a), _unshow(b)))
        tok = cls(merges, specials)
        for line in (directory / "vocab.txt").read_text(encoding="utf-8").splitlines():
            text, idx = line.rsplit(" ", 1)
            expected = tok.id_to_token[int(idx)]
            shown = expected if isinstance(expected, str) else _show(expected)
            if shown != text:
                raise ValueError(f"vocab.txt disagrees with merges at id {idx}")
        if tok.vocab_size != config["vocab_size"]:
            raise ValueError("vocab size in tokenizer.json does not match merges")
        return tok

    def __eq__(self, other):
        return isinstance(other, ByteLevelBPE) and self.merges == other.merges and self.specials == other.specials


def train_bpe(corpus, vocab_size: int, seed: int = 0) -> ByteLevelBPE:
    return ByteLevelBPE.train(corpus, vocab_size, seed)
