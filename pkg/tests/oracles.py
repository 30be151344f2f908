"""Independent brute-force reference implementations used by the tests.

These deliberately re-derive results from definitions, sharing no code with
the library paths they certify.
"""

import math
from collections import Counter


def bleu_oracle(hyps, refs):
    """By-the-definition corpus BLEU-4 with clipped counts and brevity penalty."""

    def grams(tokens, n):
        return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))

    hyps = [h.split() if isinstance(h, str) else list(h) for h in hyps]
    refs = [r.split() if isinstance(r, str) else list(r) for r in refs]
    logs = []
    for n in (1, 2, 3, 4):
        num = den = 0
        for h, r in zip(hyps, refs):
            hg, rg = grams(h, n), grams(r, n)
            den += sum(hg.values())
            num += sum(min(c, rg.get(g, 0)) for g, c in hg.items())
        if den == 0:
            continue
        if num == 0:
            return 0.0
        logs.append(math.log(num / den))
    if not logs:
        return 0.0
    c = sum(len(h) for h in hyps)
    r = sum(len(t) for t in refs)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(sum(logs) / len(logs))
