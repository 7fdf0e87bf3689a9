"""Brute-force reference implementations, written straight from the definitions.

They share no code with the package beyond the data containers.
"""

import math


def tied_ranks_bruteforce(values):
    out = []
    for x in values:
        less = sum(1 for y in values if y < x)
        equal = sum(1 for y in values if y == x)
        # the run occupies ranks less+1 .. less+equal
        out.append(less + (equal + 1) / 2)
    return out


def kendall_pairs(a, b):
    """(concordant, discordant, tied_a, tied_b, tied_both) over all pairs."""
    C = D = ta = tb = tab = 0
    n = len(a)
    for i in range(n):
        for j in range(i + 1, n):
            da = (a[i] > a[j]) - (a[i] < a[j])
            db = (b[i] > b[j]) - (b[i] < b[j])
            if da == 0:
                ta += 1
            if db == 0:
                tb += 1
            if da == 0 and db == 0:
                tab += 1
            if da * db > 0:
                C += 1
            elif da * db < 0:
                D += 1
    return C, D, ta, tb, tab


def tau_b_bruteforce(a, b):
    C, D, ta, tb, _ = kendall_pairs(a, b)
    n = len(a)
    n0 = n * (n - 1) // 2
    return (C - D) / math.sqrt((n0 - ta) * (n0 - tb))


def tau_a_bruteforce(a, b):
    C, D, *_ = kendall_pairs(a, b)
    n = len(a)
    return (C - D) / (n * (n - 1) / 2)


def inversions_bruteforce(x):
    n = len(x)
    return sum(1 for i in range(n) for j in range(i + 1, n) if x[i] > x[j])


def update_naive(ranks, votes, values, mask, weights=None):
    """Consensus update recomputed from its definition with plain lists.

    Returns new (ranks, votes) lists.
    """
    S = [p for p in range(len(ranks)) if mask[p]]
    held = [ranks[p] for p in S]
    r_c = tied_ranks_bruteforce(held)
    r_d = tied_ranks_bruteforce([float(values[p]) for p in S])
    w = [1.0 if weights is None else float(weights[p]) for p in S]
    v = [float(votes[p]) for p in S]
    score = [(v[k] * r_c[k] + w[k] * r_d[k]) / (v[k] + w[k]) for k in range(len(S))]
    order = sorted(range(len(S)), key=lambda k: (score[k], r_c[k]))
    new_ranks = list(ranks)
    for rank_value, k in zip(sorted(held), order):
        new_ranks[S[k]] = rank_value
    new_votes = [float(x) for x in votes]
    for k, p in enumerate(S):
        new_votes[p] = v[k] + w[k]
    return new_ranks, new_votes
