"""Brute-force statistics used to cross-check the calibration code.

Pure Python, no package imports.  Ranks are counted pairwise, correlations
are summed term by term, and the step-up rule is evaluated from its
definition (largest k with at least k p-values under k*q/m) rather than by
walking a sorted list.
"""
import math
from fractions import Fraction
from itertools import combinations


def average_ranks(xs):
    out = []
    for x in xs:
        below = sum(1 for y in xs if y < x)
        tied = sum(1 for y in xs if y == x)
        out.append(below + (tied + 1) / 2.0)
    return out


def pearson(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)


def spearman(xs, ys):
    return pearson(average_ranks(xs), average_ranks(ys))


def bh_reject(ps, q):
    """Index set rejected by the step-up rule, from its definition (exact arithmetic)."""
    m = len(ps)
    exact = [Fraction(p) for p in ps]
    q = Fraction(q)
    best = 0
    for k in range(1, m + 1):
        if sum(1 for p in exact if p <= k * q / m) >= k:
            best = k
    if best == 0:
        return set()
    return {j for j, p in enumerate(exact) if p <= best * q / m}


def all_subsets(items):
    for r in range(1, len(items) + 1):
        yield from combinations(range(len(items)), r)


if __name__ == "__main__":
    x, y = [1, 2, 3, 4], [1, 3, 2, 4]
    print("pearson", pearson(x, y), "spearman", spearman(x, y))
    print("bh", sorted(bh_reject([0.01, 0.02, 0.04, 0.5], 0.05)))
