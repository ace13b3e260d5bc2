"""QE examples, tokenization into the ``[cls] target [sep] source [eos]`` layout,
TSV corpora, few-shot splits and TER targets."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OK, BAD = "OK", "BAD"
PAD, UNK, CLS, SEP, EOS = "[pad]", "[unk]", "[cls]", "[sep]", "[eos]"
SPECIALS = (PAD, UNK, CLS, SEP, EOS)
CONT = "##"
SCHEMAS = ("da", "hter", "mqm", "tags")


class DataFormatError(ValueError):
    pass


@dataclass
class QEExample:
    lp: str
    source: tuple
    target: tuple
    score: float = 0.0
    tags: tuple | None = None
    reference: tuple | None = None

    def __post_init__(self):
        self.source = tuple(self.source.split() if isinstance(self.source, str) else self.source)
        self.target = tuple(self.target.split() if isinstance(self.target, str) else self.target)
        if isinstance(self.reference, str):
            self.reference = tuple(self.reference.split())
        if self.tags is not None:
            tags = tuple(self.tags.split() if isinstance(self.tags, str) else self.tags)
            if len(tags) != len(self.target):
                raise DataFormatError(f"{len(tags)} tags for {len(self.target)} target words")
            if any(t not in (OK, BAD) for t in tags):
                raise DataFormatError(f"tags must be OK/BAD, got {tags}")
            self.tags = tags

    @property
    def bad_mask(self) -> np.ndarray:
        return np.array([t == BAD for t in self.tags], dtype=bool)


def lp_token(lp: str) -> str:
    return f"<{lp}>"


def split_word(word: str, max_piece: int = 4) -> list[str]:
    """Fixed-width character pieces; continuation pieces carry a ``##`` marker."""
    pieces = [word[i:i + max_piece] for i in range(0, len(word), max_piece)]
    return [pieces[0]] + [CONT + p for p in pieces[1:]]


def join_pieces(pieces) -> str:
    return "".join(p[len(CONT):] if p.startswith(CONT) else p for p in pieces)


class Vocab:
    def __init__(self, pieces):
        self.pieces = list(pieces)
        self.index = {p: i for i, p in enumerate(self.pieces)}
        if len(self.index) != len(self.pieces):
            raise ValueError("duplicate pieces in vocabulary")
        missing = [s for s in SPECIALS if s not in self.index]
        if missing:
            raise ValueError(f"vocabulary lacks special tokens {missing}")

    def __len__(self):
        return len(self.pieces)

    def __contains__(self, piece):
        return piece in self.index

    def id(self, piece: str) -> int:
        return self.index.get(piece, self.index[UNK])

    @classmethod
    def build(cls, examples, max_piece: int = 4, lps=()) -> "Vocab":
        counts = Counter()
        lp_set = set(lps)
        for ex in examples:
            lp_set.add(ex.lp)
            for seg in (ex.source, ex.target, ex.reference or ()):
                for w in seg:
                    counts.update(split_word(w, max_piece))
        lp_pieces = [lp_token(lp) for lp in sorted(lp_set)]
        return cls(list(SPECIALS) + lp_pieces + sorted(counts))

    def save(self, path) -> None:
        Path(path).write_text("".join(p + "\n" for p in self.pieces), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


@dataclass
class TokenizedInput:
    token_ids: np.ndarray
    pieces: list
    first_pieces: np.ndarray
    piece_word: dict = field(default_factory=dict)
    cls_index: int = 0
    target_span: tuple = (0, 0)
    source_span: tuple = (0, 0)

    def __len__(self):
        return len(self.token_ids)


def tokenize_pair(example: QEExample, vocab: Vocab, use_lp_prefix: bool = False,
                  use_reference: bool = False, max_piece: int = 4) -> TokenizedInput:
    if not example.source or not example.target:
        raise DataFormatError("empty source or target")
    pieces = [CLS]
    if use_lp_prefix:
        if lp_token(example.lp) not in vocab:
            raise DataFormatError(f"vocabulary has no prefix token for {example.lp!r}")
        pieces.append(lp_token(example.lp))
    start = len(pieces)
    first, piece_word = [], {}
    for w_idx, word in enumerate(example.target):
        first.append(len(pieces))
        for p in split_word(word, max_piece):
            piece_word[len(pieces)] = w_idx
            pieces.append(p)
    target_span = (start, len(pieces))
    pieces.append(SEP)
    if use_lp_prefix:
        pieces.append(lp_token(example.lp))
    src_start = len(pieces)
    for word in example.source:
        pieces.extend(split_word(word, max_piece))
    source_span = (src_start, len(pieces))
    pieces.append(EOS)
    if use_reference and example.reference:
        pieces.append(SEP)
        for word in example.reference:
            pieces.extend(split_word(word, max_piece))
        pieces.append(EOS)
    ids = np.array([vocab.id(p) for p in pieces], dtype=np.int64)
    return TokenizedInput(ids, pieces, np.array(first, dtype=np.int64), piece_word, 0,
                          target_span, source_span)


def detokenize_target(tok: TokenizedInput) -> list[str]:
    words: dict[int, list] = {}
    for pos, w in sorted(tok.piece_word.items()):
        words.setdefault(w, []).append(tok.pieces[pos])
    return [join_pieces(words[w]) for w in sorted(words)]


# TSV ------------------------------------------------------------------------

def parse_qe_tsv(path, schema: str = "da") -> list[QEExample]:
    """Read ``lp, src, mt, score[, tags][, ref]`` rows (header required)."""
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:4] != ["lp", "src", "mt", "score"] or any(h not in ("tags", "ref") for h in header[4:]):
        raise DataFormatError(f"{path}:1: bad header {header}")
    if schema == "tags" and "tags" not in header:
        raise DataFormatError(f"{path}:1: schema 'tags' needs a tags column")
    examples = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        rec = dict(zip(header, row))
        try:
            score = float(rec["score"])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric score {rec['score']!r}") from None
        if not np.isfinite(score):
            raise DataFormatError(f"{path}:{lineno}: non-finite score")
        if schema == "hter" and not 0.0 <= score <= 1.0:
            raise DataFormatError(f"{path}:{lineno}: HTER score {score} outside [0, 1]")
        try:
            ex = QEExample(rec["lp"], rec["src"], rec["mt"], score, rec.get("tags"), rec.get("ref"))
        except DataFormatError as err:
            raise DataFormatError(f"{path}:{lineno}: {err}") from None
        examples.append(ex)
    return examples


def write_qe_tsv(path, examples, with_tags: bool | None = None, with_ref: bool = False) -> None:
    if with_tags is None:
        with_tags = all(ex.tags is not None for ex in examples)
    header = ["lp", "src", "mt", "score"] + (["tags"] if with_tags else []) + (["ref"] if with_ref else [])
    lines = ["\t".join(header)]
    for ex in examples:
        row = [ex.lp, " ".join(ex.source), " ".join(ex.target), repr(float(ex.score))]
        if with_tags:
            row.append(" ".join(ex.tags))
        if with_ref:
            row.append(" ".join(ex.reference or ()))
        lines.append("\t".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def tag_distribution(examples) -> tuple[float, float]:
    """(OK ratio, BAD ratio) over all tagged target words."""
    counts = Counter(t for ex in examples if ex.tags for t in ex.tags)
    total = counts[OK] + counts[BAD]
    if total == 0:
        raise DataFormatError("no tags present")
    return counts[OK] / total, counts[BAD] / total


# splits and targets ---------------------------------------------------------

def split_halves(dataset, seed: int = 0):
    """Seeded shuffle into (finetune, validation); the first half gets the odd one."""
    dataset = list(dataset)
    if len(dataset) < 2:
        raise ValueError("split_halves needs at least 2 examples")
    order = np.random.default_rng(seed).permutation(len(dataset))
    cut = (len(dataset) + 1) // 2
    return [dataset[i] for i in order[:cut]], [dataset[i] for i in order[cut:]]


def word_edit_distance(hyp, ref) -> int:
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def compute_ter(target_words, postedit_words) -> float:
    """Shift-free TER: word Levenshtein distance / post-edit length, capped at 1."""
    target_words, postedit_words = list(target_words), list(postedit_words)
    if not postedit_words:
        raise ValueError("empty post-edit")
    return min(1.0, word_edit_distance(target_words, postedit_words) / len(postedit_words))
