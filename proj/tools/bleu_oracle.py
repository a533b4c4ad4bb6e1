"""Regenerates tests/bleu_cases.h from sacrebleu, cross-checked by direct counting.

Usage: python3 tools/bleu_oracle.py > tests/bleu_cases.h
"""
import math
import random
from collections import Counter

import sacrebleu


def make_case(rng):
    words = ["a", "b", "c", "d", "e", "f", "g"]
    pairs = []
    for _ in range(rng.randint(1, 4)):
        ref = [rng.choice(words) for _ in range(rng.randint(4, 12))]
        hyp = list(ref)
        for _ in range(rng.randint(0, 3)):
            op = rng.randrange(3)
            if op == 0 and hyp:
                hyp[rng.randrange(len(hyp))] = rng.choice(words)
            elif op == 1 and len(hyp) > 1:
                del hyp[rng.randrange(len(hyp))]
            else:
                hyp.insert(rng.randrange(len(hyp) + 1), rng.choice(words))
        pairs.append((hyp, ref))
    return pairs


def counted_bleu(hyps, refs):
    num, den = [0] * 4, [0] * 4
    for h, r in zip(hyps, refs):
        h, r = h.split(), r.split()
        for n in range(1, 5):
            hc = Counter(tuple(h[i:i + n]) for i in range(len(h) - n + 1))
            rc = Counter(tuple(r[i:i + n]) for i in range(len(r) - n + 1))
            num[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            den[n - 1] += sum(hc.values())
    if min(num) == 0:
        return 0.0
    c = sum(len(h.split()) for h in hyps)
    r = sum(len(x.split()) for x in refs)
    bp = math.exp(1 - r / c) if c < r else 1.0
    return 100 * bp * math.exp(sum(math.log(a / b) for a, b in zip(num, den)) / 4)


def main():
    rng = random.Random(20240601)
    print("#pragma once")
    print("// Generated by tools/bleu_oracle.py; expected values from sacrebleu")
    print("// (tokenize=none, smooth=none).")
    print()
    print("#include <string>")
    print("#include <vector>")
    print()
    print("struct BleuCase {")
    print("  std::vector<std::string> hypotheses;")
    print("  std::vector<std::string> references;")
    print("  double expected;")
    print("};")
    print()
    print("inline const std::vector<BleuCase> kBleuCases = {")
    for _ in range(20):
        pairs = make_case(rng)
        hyps = [" ".join(h) for h, _ in pairs]
        refs = [" ".join(r) for _, r in pairs]
        score = sacrebleu.corpus_bleu(hyps, [refs], tokenize="none",
                                      smooth_method="none", force=True).score
        assert abs(score - counted_bleu(hyps, refs)) < 1e-9
        h = ", ".join('"%s"' % s for s in hyps)
        r = ", ".join('"%s"' % s for s in refs)
        print("    {{%s},\n     {%s},\n     %.17g}," % (h, r, score))
    print("};")


if __name__ == "__main__":
    main()
