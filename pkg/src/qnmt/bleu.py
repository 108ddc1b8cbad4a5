"""Corpus-level BLEU-4 for comparing decoder outputs.

Case-sensitive, whitespace-tokenized, no smoothing: the geometric mean of
modified n-gram precisions (n = 1..4) times the brevity penalty
``exp(min(0, 1 - ref_len / hyp_len))``.  Any zero n-gram precision zeroes
the score.
"""

from __future__ import annotations

import math
from collections import Counter

from .errors import InvalidInputError

MAX_ORDER = 4


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references) -> float:
    """Corpus BLEU of ``hypotheses`` against line-aligned ``references``,
    in [0, 100]."""
    hyps = list(hypotheses)
    refs = list(references)
    if len(hyps) != len(refs):
        raise InvalidInputError(
            f"hypothesis and reference line counts differ: {len(hyps)} vs {len(refs)}")
    if not hyps:
        raise InvalidInputError("cannot score an empty corpus")

    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        h = hyp.split() if isinstance(hyp, str) else list(hyp)
        r = ref.split() if isinstance(ref, str) else list(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, MAX_ORDER + 1):
            hc = _ngrams(h, n)
            if not hc:
                continue
            rc = _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += sum(hc.values())

    if any(t == 0 for t in totals) or any(m == 0 for m in matches):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / MAX_ORDER
    brevity = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * brevity * math.exp(log_precision)
