#!/usr/bin/env python3
"""Independent reference computations used to freeze test fixtures.

Run once; the printed values are pasted into the C++ tests. Nothing here is
imported by the library or the tests at build time.

    python3 tests/oracles/reference_oracles.py [path/to/vocab.json]
"""
import json
import sys

from scipy import stats

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK64

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def split(self):
        return SplitMix64(self.next())

    def below(self, n):
        threshold = ((1 << 64) - n) % n
        while True:
            x = self.next()
            if x >= threshold:
                return x % n


def md_problems(seed, count):
    root = SplitMix64(seed)
    pos_rng = root.split()
    neg_rng = root.split()

    def draw(rng, lo, hi):
        out = []
        for _ in range(count):
            lhs = lo + rng.below(hi - lo + 1)
            rhs = lo + rng.below(hi - lo + 1)
            op = "plus" if rng.below(2) == 0 else "minus"
            out.append((lhs, rhs, op))
        return out

    return draw(pos_rng, 100, 200), draw(neg_rng, 1, 20)


def tokenize(text, vocab):
    index = {tok: i for i, tok in enumerate(vocab)}
    unk = index["<unk>"]
    out = []
    i, n = 0, len(text)
    pending = False

    def emit(piece):
        out.append(index.get(piece, unk))

    while i < n:
        c = text[i]
        if c == "\n":
            if pending:
                emit(" ")
            emit("\n")
            pending = False
            i += 1
        elif c in " \t\r\f\v":
            while i < n and text[i] in " \t\r\f\v":
                i += 1
            pending = True
        elif ord(c) >= 0x80 or ord(c) < 0x20 or ord(c) == 0x7F:
            while i < n and (ord(text[i]) >= 0x80 or (ord(text[i]) < 0x20 and text[i] not in "\n\t\r\f\v") or ord(text[i]) == 0x7F):
                i += 1
            out.append(unk)
            pending = False
        elif c.isascii() and c.isalpha():
            j = i
            while j < n and text[j].isascii() and text[j].isalpha():
                j += 1
            word = text[i:j]
            prefix = " " if pending else ""
            if prefix + word in index:
                emit(prefix + word)
            else:
                emit(prefix + word[0])
                for ch in word[1:]:
                    emit(ch)
            pending = False
            i = j
        else:
            emit((" " if pending else "") + c)
            pending = False
            i += 1
    if pending:
        emit(" ")
    return out


def main():
    pos, neg = md_problems(42, 3)
    print("md seed=42 count=3 positives:", pos)
    print("md seed=42 count=3 negatives:", neg)

    r = stats.ttest_ind([1, 2, 3], [4, 5, 6], equal_var=False)
    print("welch (1,2,3) vs (4,5,6): %.12f" % r.statistic)

    r = stats.ttest_rel([1, 2, 4], [0, 0, 0])
    print("paired (1,2,4) vs 0: t=%.12f p=%.12f df=%d" % (r.statistic, r.pvalue, r.df))

    md = [-0.15, -0.05, -0.20, -0.10]
    tom = [-0.05, 0.00, -0.10, -0.05]
    r = stats.ttest_rel(md, tom)
    print("cross-task md=%s tom=%s: t=%.12f p=%.12f" % (md, tom, r.statistic, r.pvalue))

    a = [0.3, -0.1, 0.25, 0.05, 0.0]
    b = [0.1, -0.2, 0.05, 0.1, -0.3]
    r = stats.ttest_rel(a, b)
    print("paired a=%s b=%s: t=%.12f p=%.12f" % (a, b, r.statistic, r.pvalue))

    if len(sys.argv) > 1:
        with open(sys.argv[1]) as f:
            vocab = json.load(f)["tokens"]
        for s in ["What is 157 plus 189?", "Sally put the ball in the basket.\nWhere will Sally look?",
                  "Zyx  q\t!"]:
            print("tokens %r: %s" % (s, tokenize(s, vocab)))


if __name__ == "__main__":
    main()
