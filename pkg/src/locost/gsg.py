"""Gap-sentence pre-training data: sentence splitting, ROUGE, pseudo-summary selection, vocab."""

import math
import re
from collections import Counter
from dataclasses import dataclass

from .model import BOS, EOS, PAD, UNK

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")
_ALNUM = re.compile(r"[^\W_]+")
_VOCAB_TOKEN = re.compile(r"\w+|[^\w\s]")

SPECIAL_TOKENS = ("<pad>", "<eos>", "<bos>", "<unk>")


class SkipDocument(Exception):
    """The document has too few sentences for floor(alpha * M) >= 1."""


@dataclass(frozen=True)
class Document:
    sentences: tuple

    def __post_init__(self):
        if not self.sentences:
            raise ValueError("a document needs at least one sentence")
        if any(not s for s in self.sentences):
            raise ValueError("empty sentence in document")

    def __len__(self):
        return len(self.sentences)


@dataclass(frozen=True)
class PseudoPair:
    pseudo_source: str
    pseudo_summary: str
    selected: tuple  # 1-based sentence indices, ascending


def split_sentences(text):
    """Split after '.', '!' or '?' when followed by whitespace (or at end of text).

    Abbreviations are not special-cased: "Dr. Smith" splits after "Dr.".
    """
    if not text or not text.strip():
        raise ValueError("cannot split empty text")
    parts = [p.strip() for p in _SENTENCE_END.split(text.strip())]
    return Document(tuple(p for p in parts if p))


def rouge_tokens(text):
    return _ALNUM.findall(text.lower())


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap, n_cand, n_ref):
    # 2PR / (P + R) reduced to one integer division, so equal ratios give equal floats
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    return 2 * overlap / (n_cand + n_ref)


def rouge_n(candidate, reference, n=1):
    """ROUGE-N F1 over lowercased alphanumeric tokens."""
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    cand = _ngrams(rouge_tokens(candidate), n)
    ref = _ngrams(rouge_tokens(reference), n)
    overlap = sum((cand & ref).values())
    return _f1(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a, b):
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference):
    """ROUGE-L F1 from the token-level longest common subsequence."""
    cand = rouge_tokens(candidate)
    ref = rouge_tokens(reference)
    return _f1(lcs_length(cand, ref), len(cand), len(ref))


def num_selected(m, alpha):
    # small slack so that e.g. 0.29 * 100 floors to 29
    return math.floor(alpha * m + 1e-9)


def sentence_scores(doc):
    """ROUGE-1 F1 of each sentence against the rest of the document."""
    sents = doc.sentences
    return [rouge_n(s, " ".join(sents[:j] + sents[j + 1 :]), 1) for j, s in enumerate(sents)]


def gsg_select(doc, alpha=0.2):
    """Pick the floor(alpha * M) sentences that best summarize the rest (scored once each).

    Ties go to the lower index. Raises ``SkipDocument`` when floor(alpha * M) == 0.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    k = num_selected(len(doc), alpha)
    if k < 1:
        raise SkipDocument(f"{len(doc)} sentences give floor({alpha} * M) = 0")
    scores = sentence_scores(doc)
    ranked = sorted(range(len(doc)), key=lambda j: (-scores[j], j))
    chosen = sorted(ranked[:k])
    keep = set(chosen)
    summary = " ".join(doc.sentences[j] for j in chosen)
    source = " ".join(s for j, s in enumerate(doc.sentences) if j not in keep)
    return PseudoPair(source, summary, tuple(j + 1 for j in chosen))


def vocab_tokens(text):
    return _VOCAB_TOKEN.findall(text.lower())


class Vocab:
    """Word-level vocabulary: specials first, then corpus tokens, then optional sentinels."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocab must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate vocab entries")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    pad_id, eos_id, bos_id, unk_id = PAD, EOS, BOS, UNK

    def encode(self, text):
        return [self.index.get(t, UNK) for t in vocab_tokens(text)]

    def decode(self, ids):
        skip = {PAD, EOS, BOS}
        return " ".join(self.tokens[i] if 0 <= i < len(self.tokens) else SPECIAL_TOKENS[UNK] for i in ids if i not in skip)


def build_vocab(corpus, size, sentinels=0):
    """Most frequent tokens first (ties lexicographic); ``sentinels`` ids reserved at the top."""
    if size <= len(SPECIAL_TOKENS) + sentinels:
        raise ValueError("vocab size must exceed the number of special tokens")
    counts = Counter()
    seen = False
    for text in corpus:
        seen = True
        counts.update(vocab_tokens(text))
    if not seen or not counts:
        raise ValueError("empty corpus")
    room = size - len(SPECIAL_TOKENS) - sentinels
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:room]
    extra = [f"<extra_id_{i}>" for i in range(sentinels)]
    return Vocab(list(SPECIAL_TOKENS) + [t for t, _ in ranked] + extra)


def encode_text(vocab, text):
    return vocab.encode(text)


def decode_ids(vocab, ids):
    return vocab.decode(ids)
