"""Caption metrics: BLEU-4, CIDEr-D, role-recall controllability, diversity.

CIDEr-D here is both the evaluation metric and the RL training reward; there
is exactly one implementation.  All functions take captions as token
sequences, not strings.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCaptions, EmptyReferences, Unparseable
from .roles import VSR, expand_sub_roles

NGRAM_MAX = 4


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# --------------------------------------------------------------------------
# corpus statistics (IDF backing store for CIDEr-D)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusStats:
    """Document frequencies of 1..4-grams over a reference corpus.

    A "document" is one image's reference set; an n-gram counts once per
    document no matter how often it repeats inside it.
    """

    doc_freq: dict[tuple, int]
    corpus_size: int

    def idf(self, ngram: tuple) -> float:
        return math.log(self.corpus_size) - math.log(max(1.0, self.doc_freq.get(ngram, 0)))


def build_corpus_stats(reference_sets) -> CorpusStats:
    """reference_sets: one list of reference token sequences per image."""
    df: Counter = Counter()
    n_docs = 0
    for refs in reference_sets:
        n_docs += 1
        seen = set()
        for ref in refs:
            for n in range(1, NGRAM_MAX + 1):
                seen.update(_ngrams(ref, n).keys())
        df.update(seen)
    return CorpusStats(doc_freq=dict(df), corpus_size=n_docs)


# --------------------------------------------------------------------------
# CIDEr-D
# --------------------------------------------------------------------------

def _tfidf_vecs(tokens, stats: CorpusStats):
    vecs = []
    norms = []
    for n in range(1, NGRAM_MAX + 1):
        vec = {ng: cnt * stats.idf(ng) for ng, cnt in _ngrams(tokens, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms, len(tokens)


def cider_d(candidate, references, stats: CorpusStats, sigma: float = 6.0) -> float:
    """Consensus score in [0, 10]: clipped TF-IDF cosine per n-gram order,
    averaged over n = 1..4 and over references, with a Gaussian penalty on
    the token-length difference."""
    references = list(references)
    if not references:
        raise EmptyReferences("CIDEr-D needs at least one reference")
    c_vecs, c_norms, c_len = _tfidf_vecs(tuple(candidate), stats)
    per_n = np.zeros(NGRAM_MAX)
    for ref in references:
        r_vecs, r_norms, r_len = _tfidf_vecs(tuple(ref), stats)
        penalty = math.exp(-((c_len - r_len) ** 2) / (2 * sigma ** 2))
        for n in range(NGRAM_MAX):
            num = sum(min(w, r_vecs[n].get(ng, 0.0)) * r_vecs[n].get(ng, 0.0)
                      for ng, w in c_vecs[n].items())
            if c_norms[n] > 0 and r_norms[n] > 0:
                per_n[n] += penalty * num / (c_norms[n] * r_norms[n])
    return float(10.0 * np.mean(per_n / len(references)))


# --------------------------------------------------------------------------
# BLEU-4
# --------------------------------------------------------------------------

def bleu4(candidate, references) -> float:
    """Sentence BLEU-4 without smoothing: any empty n-gram precision gives 0."""
    candidate = tuple(candidate)
    references = [tuple(r) for r in references]
    if not candidate:
        raise ValueError("candidate must be non-empty")
    if not references:
        raise EmptyReferences("BLEU-4 needs at least one reference")
    log_p = 0.0
    for n in range(1, NGRAM_MAX + 1):
        cand = _ngrams(candidate, n)
        total = sum(cand.values())
        if total == 0:
            return 0.0
        max_ref: Counter = Counter()
        for ref in references:
            for ng, cnt in _ngrams(ref, n).items():
                max_ref[ng] = max(max_ref[ng], cnt)
        clipped = sum(min(cnt, max_ref.get(ng, 0)) for ng, cnt in cand.items())
        if clipped == 0:
            return 0.0
        log_p += 0.25 * math.log(clipped / total)
    c = len(candidate)
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]  # closest, ties short
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


# --------------------------------------------------------------------------
# controllability recall
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RoleRecallReport:
    """Per-sample recall of the verb, the sub-role multiset, and pair order.

    r_v asks whether the controlled verb's surface form was recalled in the
    caption at all; the role scores additionally need the caption to parse.
    With fewer than two control sub-roles there is no order to check and
    r_sr2 falls back to r_sr1.
    """

    r_v: float
    r_sr1: float
    r_sr2: float


def ordered_pair_recall(gt_seq, parsed_seq) -> float:
    """Fraction of ordered element pairs of gt_seq preserved in parsed_seq.

    Elements are matched by identity of hashable keys; duplicate keys should
    be disambiguated by the caller (occurrence indexing) before the call.
    """
    gt = list(gt_seq)
    pos = {e: i for i, e in enumerate(parsed_seq)}
    total = 0
    hit = 0
    for i in range(len(gt)):
        for j in range(i + 1, len(gt)):
            total += 1
            a, b = gt[i], gt[j]
            if a in pos and b in pos and pos[a] < pos[b]:
                hit += 1
    if total == 0:
        raise ValueError("need at least two elements to form pairs")
    return hit / total


def role_recall(caption, vsr: VSR, grammar, distinct_roles: bool = False) -> RoleRecallReport:
    caption = tuple(caption)
    surface = grammar.verb_surfaces.get(vsr.verb)
    r_v = 1.0 if surface is not None and surface in caption else 0.0
    control = [s.key() for s in expand_sub_roles(vsr)]
    try:
        parsed = grammar.inverse_parse(caption)
    except Unparseable:
        return RoleRecallReport(r_v, 0.0, 0.0)
    got = [s.key() for s in parsed.subroles()]
    if distinct_roles:
        c_names = {k.rsplit("-", 1)[0] for k in control}
        g_names = {k.rsplit("-", 1)[0] for k in got}
        r_sr1 = len(c_names & g_names) / len(c_names)
    else:
        c_cnt, g_cnt = Counter(control), Counter(got)
        r_sr1 = sum(min(c, g_cnt.get(k, 0)) for k, c in c_cnt.items()) / len(control)
    if len(control) >= 2:
        r_sr2 = ordered_pair_recall(control, got)
    else:
        r_sr2 = r_sr1
    return RoleRecallReport(r_v, r_sr1, r_sr2)


# --------------------------------------------------------------------------
# diversity
# --------------------------------------------------------------------------

def div_n(captions, n: int) -> float:
    """Distinct n-grams across the caption set divided by total tokens."""
    captions = [tuple(c) for c in captions]
    if not captions:
        raise EmptyCaptions("need at least one caption")
    distinct = set()
    tokens = 0
    for c in captions:
        distinct.update(_ngrams(c, n).keys())
        tokens += len(c)
    return len(distinct) / tokens if tokens else 0.0


def self_cider(captions, stats: CorpusStats) -> float:
    """Spectral diversity of the pairwise CIDEr-D kernel, in [0, 1].

    Identical captions give a rank-one kernel and score 0; pairwise-dissimilar
    captions give a full-rank kernel and score 1.  Invariant to caption order.
    """
    captions = [tuple(c) for c in captions]
    m = len(captions)
    if m < 2:
        raise EmptyCaptions("need at least two captions")
    K = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            K[i, j] = cider_d(captions[i], [captions[j]], stats) / 10.0
    K = 0.5 * (K + K.T)  # clipping makes pairwise CIDEr-D mildly asymmetric
    lam = np.clip(np.linalg.eigvalsh(K), 0.0, None)
    if lam.max() > 0:
        lam[lam < lam.max() * 1e-10] = 0.0  # sqrt would amplify solver noise
    total = np.sqrt(lam).sum()
    if total <= 0:
        return 0.0
    ratio = math.sqrt(lam.max()) / total
    return float(-math.log(ratio) / math.log(m))
