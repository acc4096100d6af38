"""Compiled inner loops for the integer-count Space Saving sketch.

The bin store is a stream-summary layout packed into one flat int64 vector
``S`` (see the offsets below) so numba can keep it in registers without
per-call refcounting. ``ORDER`` holds bin ids sorted by ascending count and
every run of equal counts is a *group* with a contiguous ``[GSTART, GEND]``
range in ``ORDER``; a bin's count is the count of its group. The minimum group
is the group of ``ORDER[0]``, so picking a minimum bin uniformly at random and
incrementing a bin are both O(1).

All bins exist from the start with label -1 and count 0, which makes the fill
phase the same code path as the replacement step (``p = 1/(0 + 1) = 1``).

Randomness comes from a per-sketch xoshiro256** state (four uint64 words) so
that replicate batches are reproducible and each replicate owns its stream.
"""

import numpy as np
from numba import njit

# row offsets, in units of m
LABEL = 0
ORDER = 1
POS = 2
BGRP = 3
GSTART = 4
GEND = 5
GCOUNT = 6
FREE = 7
N_ROWS = 8
# scalar slots after the 8 rows
T_ROWS = 0
N_FREE = 1
N_META = 2

_U53 = 1.0 / 9007199254740992.0


def state_size(m):
    return N_ROWS * m + N_META


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True, inline="always")
def rng_next(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, inline="always")
def rng_uniform(s):
    """Uniform double in [0, 1)."""
    return np.float64(rng_next(s) >> np.uint64(11)) * _U53


@njit(cache=True, inline="always")
def rng_uniform_pos(s):
    """Uniform double in (0, 1]."""
    return (np.float64(rng_next(s) >> np.uint64(11)) + 1.0) * _U53


@njit(cache=True, inline="always")
def rng_below(s, n):
    v = np.int64(rng_uniform(s) * n)
    if v >= n:
        v = n - 1
    return v


@njit(cache=True, inline="always")
def rng_geometric_failures(s, p):
    """Failures before the first success of Bernoulli(p) trials."""
    if p >= 1.0:
        return np.int64(0)
    k = np.floor(np.log(rng_uniform_pos(s)) / np.log1p(-p))
    if k > 4.0e18:
        return np.int64(4000000000000000000)
    return np.int64(k)


# ---------------------------------------------------------------------------
# stream summary
# ---------------------------------------------------------------------------


@njit(cache=True)
def init_state(S, m):
    for b in range(m):
        S[LABEL * m + b] = -1
        S[ORDER * m + b] = b
        S[POS * m + b] = b
        S[BGRP * m + b] = 0
    S[GSTART * m] = 0
    S[GEND * m] = m - 1
    S[GCOUNT * m] = 0
    nfree = 0
    for g in range(m - 1, 0, -1):
        S[FREE * m + nfree] = g
        nfree += 1
    S[N_ROWS * m + T_ROWS] = 0
    S[N_ROWS * m + N_FREE] = nfree


@njit(cache=True)
def load_state(labels_in, counts_in, S, m, where):
    """Install bins given in ascending-count order; the rest stay empty."""
    init_state(S, m)
    n = labels_in.shape[0]
    offset = m - n
    cnt = np.zeros(m, np.int64)
    for i in range(m):
        if i >= offset:
            lab = labels_in[i - offset]
            S[LABEL * m + i] = lab
            cnt[i] = counts_in[i - offset]
            if lab >= 0:
                where[lab] = i
    nfree = 0
    for g in range(m - 1, -1, -1):
        S[FREE * m + nfree] = g
        nfree += 1
    i = 0
    while i < m:
        nfree -= 1
        g = S[FREE * m + nfree]
        j = i
        while j + 1 < m and cnt[j + 1] == cnt[i]:
            j += 1
        S[GSTART * m + g] = i
        S[GEND * m + g] = j
        S[GCOUNT * m + g] = cnt[i]
        for k in range(i, j + 1):
            S[BGRP * m + k] = g
        i = j + 1
    S[N_ROWS * m + N_FREE] = nfree


@njit(cache=True)
def bin_counts(S, m):
    out = np.empty(m, np.int64)
    for b in range(m):
        out[b] = S[GCOUNT * m + S[BGRP * m + b]]
    return out


@njit(cache=True, inline="always")
def bump(b, delta, S, m):
    """Add ``delta > 0`` to bin ``b`` keeping ``ORDER`` sorted."""
    o_ord = ORDER * m
    o_pos = POS * m
    o_grp = BGRP * m
    o_gs = GSTART * m
    o_ge = GEND * m
    o_gc = GCOUNT * m
    o_nf = N_ROWS * m + N_FREE
    g = S[o_grp + b]
    newc = S[o_gc + g] + delta
    p = S[o_pos + b]
    e = S[o_ge + g]
    other = S[o_ord + e]
    S[o_ord + p] = other
    S[o_pos + other] = p
    S[o_ord + e] = b
    S[o_pos + b] = e
    S[o_ge + g] = e - 1
    if e - 1 < S[o_gs + g]:
        S[FREE * m + S[o_nf]] = g
        S[o_nf] += 1
    hole = e
    joined = False
    while hole + 1 < m:
        ng = S[o_grp + S[o_ord + hole + 1]]
        c = S[o_gc + ng]
        if c < newc:
            # hop over group ng: its last member takes the hole
            e2 = S[o_ge + ng]
            last = S[o_ord + e2]
            S[o_ord + hole] = last
            S[o_pos + last] = hole
            S[o_ord + e2] = b
            S[o_pos + b] = e2
            S[o_gs + ng] = hole
            S[o_ge + ng] = e2 - 1
            hole = e2
        elif c == newc:
            S[o_gs + ng] = hole
            S[o_grp + b] = ng
            joined = True
            break
        else:
            break
    if not joined:
        nfree = S[o_nf] - 1
        S[o_nf] = nfree
        g = S[FREE * m + nfree]
        S[o_gs + g] = hole
        S[o_ge + g] = hole
        S[o_gc + g] = newc
        S[o_grp + b] = g


@njit(cache=True, inline="always")
def _increment_group(g, S, m):
    """Add one to every bin of group ``g`` at once."""
    o_ord = ORDER * m
    o_grp = BGRP * m
    o_gs = GSTART * m
    o_ge = GEND * m
    o_gc = GCOUNT * m
    o_nf = N_ROWS * m + N_FREE
    s = S[o_gs + g]
    e = S[o_ge + g]
    c = S[o_gc + g] + 1
    S[o_gc + g] = c
    if e + 1 < m:
        ng = S[o_grp + S[o_ord + e + 1]]
        if S[o_gc + ng] == c:
            # fold the smaller group into the larger one
            if S[o_ge + ng] - S[o_gs + ng] > e - s:
                keep = ng
                drop = g
            else:
                keep = g
                drop = ng
            for k in range(S[o_gs + drop], S[o_ge + drop] + 1):
                S[o_grp + S[o_ord + k]] = keep
            end = S[o_ge + ng]
            S[o_gs + keep] = s
            S[o_ge + keep] = end
            S[FREE * m + S[o_nf]] = drop
            S[o_nf] += 1


@njit(cache=True, inline="always")
def _pick_min(S, m, rng):
    g = S[BGRP * m + S[ORDER * m]]
    s = S[GSTART * m + g]
    return S[ORDER * m + s + rng_below(rng, S[GEND * m + g] - s + 1)]


@njit(cache=True, inline="always")
def _relabel(b, x, S, m, where):
    old = S[LABEL * m + b]
    if old >= 0:
        where[old] = -1
    S[LABEL * m + b] = x
    where[x] = b


@njit(cache=True, inline="always")
def process_run(x, r, unbiased, S, m, where, rng):
    """Feed ``r`` consecutive rows of item code ``x``.

    Equivalent in distribution to ``r`` single-row updates. While ``x`` is
    absent every row lands on a minimum bin whose count ``c`` stays fixed
    until the whole minimum group has been incremented, so the number of rows
    before a label flip at that level is Geometric(1/(c+1)) and a level with
    no flip can be applied as one group increment.
    """
    S[N_ROWS * m + T_ROWS] += r
    while r > 0:
        b = where[x]
        if b >= 0:
            bump(b, r, S, m)
            break
        g = S[BGRP * m + S[ORDER * m]]
        c = S[GCOUNT * m + g]
        size = S[GEND * m + g] - S[GSTART * m + g] + 1
        steps = size if size < r else r
        if unbiased:
            k = rng_geometric_failures(rng, 1.0 / (c + 1.0))
        else:
            k = np.int64(0)
        if k >= steps:
            if steps == size:
                _increment_group(g, S, m)
            else:
                for _ in range(steps):
                    bump(_pick_min(S, m, rng), 1, S, m)
            r -= steps
        else:
            for _ in range(k):
                bump(_pick_min(S, m, rng), 1, S, m)
            b = _pick_min(S, m, rng)
            _relabel(b, x, S, m, where)
            bump(b, 1, S, m)
            r -= k + 1


@njit(cache=True)
def process_rows(codes, unbiased, S, m, where, rng):
    for i in range(codes.shape[0]):
        process_run(codes[i], 1, unbiased, S, m, where, rng)


@njit(cache=True)
def process_rle(codes, runs, unbiased, S, m, where, rng):
    for i in range(codes.shape[0]):
        if runs[i] > 0:
            process_run(codes[i], runs[i], unbiased, S, m, where, rng)


# ---------------------------------------------------------------------------
# stream plans: segments emitted either as contiguous runs or as a uniformly
# random permutation of their multiset (sequential draws without
# replacement, O(distinct) memory via a Fenwick tree)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _fenwick_build(counts):
    n = counts.shape[0]
    tree = np.zeros(n + 1, np.int64)
    for i in range(n):
        tree[i + 1] = counts[i]
    for i in range(1, n + 1):
        j = i + (i & -i)
        if j <= n:
            tree[j] += tree[i]
    return tree


@njit(cache=True, inline="always")
def _fenwick_take(tree, n, top, target):
    """Slot holding the ``target``-th remaining unit; removes that unit."""
    idx = 0
    bit = top
    while bit > 0:
        nxt = idx + bit
        if nxt <= n and tree[nxt] <= target:
            idx = nxt
            target -= tree[nxt]
        bit >>= 1
    i = idx + 1
    while i <= n:
        tree[i] -= 1
        i += i & -i
    return idx


@njit(cache=True)
def _top_bit(n):
    bit = 1
    while bit * 2 <= n:
        bit *= 2
    return bit


@njit(cache=True)
def run_plan(codes, counts, seg_starts, seg_shuffled, srng, unbiased, S, m,
             where, rng):
    for sidx in range(seg_shuffled.shape[0]):
        s = seg_starts[sidx]
        e = seg_starts[sidx + 1]
        if seg_shuffled[sidx]:
            n = e - s
            tree = _fenwick_build(counts[s:e])
            top = _top_bit(n)
            remaining = 0
            for i in range(s, e):
                remaining += counts[i]
            while remaining > 0:
                j = _fenwick_take(tree, n, top, rng_below(srng, remaining))
                remaining -= 1
                process_run(codes[s + j], 1, unbiased, S, m, where, rng)
        else:
            for i in range(s, e):
                if counts[i] > 0:
                    process_run(codes[i], counts[i], unbiased, S, m, where,
                                rng)


def alias_table(weights):
    """Walker/Vose alias table for O(1) categorical draws."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    scaled = w * (n / w.sum())
    prob = np.ones(n)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s_i = small.pop()
        l_i = large.pop()
        prob[s_i] = scaled[s_i]
        alias[s_i] = l_i
        scaled[l_i] = scaled[l_i] + scaled[s_i] - 1.0
        if scaled[l_i] < 1.0:
            small.append(l_i)
        else:
            large.append(l_i)
    return prob, alias


@njit(cache=True)
def run_iid(prob, alias, codes, n_rows, srng, unbiased, S, m, where, rng,
            truth):
    """Feed ``n_rows`` i.i.d. categorical draws given by an alias table.

    ``truth[j]`` is incremented for every draw of category ``j``.
    """
    n = prob.shape[0]
    for _ in range(n_rows):
        u = rng_uniform(srng) * n
        j = np.int64(u)
        if j >= n:
            j = n - 1
        if u - j >= prob[j]:
            j = alias[j]
        truth[j] += 1
        process_run(codes[j], 1, unbiased, S, m, where, rng)


@njit(cache=True)
def _export(S, m, r, out_labels, out_counts):
    for b in range(m):
        out_labels[r, b] = S[LABEL * m + b]
        out_counts[r, b] = S[GCOUNT * m + S[BGRP * m + b]]


@njit(cache=True, nogil=True)
def replicate_plan(codes, counts, seg_starts, seg_shuffled, n_codes, m,
                   unbiased, sketch_states, stream_states, out_labels,
                   out_counts):
    """Run one fresh sketch per replicate over the plan.

    Row ``r`` of ``stream_states`` seeds the permutation of shuffled
    segments and row ``r`` of ``sketch_states`` seeds the sketch.
    """
    S = np.empty(N_ROWS * m + N_META, np.int64)
    where = np.full(n_codes, -1, np.int64)
    rng = np.empty(4, np.uint64)
    srng = np.empty(4, np.uint64)
    for r in range(sketch_states.shape[0]):
        init_state(S, m)
        where[:] = -1
        rng[:] = sketch_states[r]
        srng[:] = stream_states[r]
        run_plan(codes, counts, seg_starts, seg_shuffled, srng, unbiased, S,
                 m, where, rng)
        _export(S, m, r, out_labels, out_counts)


@njit(cache=True, nogil=True)
def replicate_iid(prob, alias, codes, n_rows, n_codes, m, unbiased,
                  sketch_states, stream_states, out_labels, out_counts,
                  out_truth):
    """Like ``replicate_plan`` for i.i.d. rows; ``out_truth[r]`` receives the
    realized count of each category in replicate ``r``."""
    S = np.empty(N_ROWS * m + N_META, np.int64)
    where = np.full(n_codes, -1, np.int64)
    rng = np.empty(4, np.uint64)
    srng = np.empty(4, np.uint64)
    for r in range(sketch_states.shape[0]):
        init_state(S, m)
        where[:] = -1
        rng[:] = sketch_states[r]
        srng[:] = stream_states[r]
        out_truth[r, :] = 0
        run_iid(prob, alias, codes, n_rows, srng, unbiased, S, m, where, rng,
                out_truth[r])
        _export(S, m, r, out_labels, out_counts)


@njit(cache=True)
def draw_shuffled(tree, n, top, remaining, srng, out):
    """Fill ``out`` with up to ``len(out)`` slots drawn without replacement."""
    k = 0
    while k < out.shape[0] and remaining > 0:
        out[k] = _fenwick_take(tree, n, top, rng_below(srng, remaining))
        remaining -= 1
        k += 1
    return k


@njit(cache=True)
def fenwick_build(counts):
    return _fenwick_build(counts)


@njit(cache=True)
def top_bit(n):
    return _top_bit(n)


@njit(cache=True)
def draw_iid(prob, alias, srng, out):
    n = prob.shape[0]
    for k in range(out.shape[0]):
        u = rng_uniform(srng) * n
        j = np.int64(u)
        if j >= n:
            j = n - 1
        if u - j >= prob[j]:
            j = alias[j]
        out[k] = j


@njit(cache=True)
def systematic(pi, size, rng):
    """Systematic fixed-size sample over a random order of the units."""
    n = pi.shape[0]
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = rng_below(rng, i + 1)
        t = perm[i]
        perm[i] = perm[j]
        perm[j] = t
    total = 0.0
    for i in range(n):
        total += pi[perm[i]]
    scale = size / total
    out = np.empty(size, np.int64)
    u = rng_uniform(rng)
    k = 0
    acc = 0.0
    for i in range(n):
        acc += pi[perm[i]] * scale
        while k < size and u + k < acc:
            out[k] = perm[i]
            k += 1
    while k < size:  # rounding at the very end of the cumulative sum
        out[k] = perm[n - 1]
        k += 1
    return np.sort(out)


@njit(cache=True)
def threshold_alpha(v, target, tol, max_iter):
    """``alpha`` with ``sum(min(1, alpha * v)) == target`` (needs target < len(v)).

    Bisection locates the clipped set, then ``alpha`` is re-solved in closed
    form on that partition.
    """
    n = v.shape[0]
    vmin = v[0]
    for i in range(n):
        if v[i] < vmin:
            vmin = v[i]
    lo = 0.0
    hi = target / vmin
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        s = 0.0
        for i in range(n):
            x = mid * v[i]
            s += 1.0 if x > 1.0 else x
        resid = s - target
        if abs(resid) <= tol:
            lo = mid
            hi = mid
            break
        if resid > 0:
            hi = mid
        else:
            lo = mid
    alpha = 0.5 * (lo + hi)
    for _ in range(n + 1):
        clipped = 0
        free_mass = 0.0
        for i in range(n):
            if alpha * v[i] >= 1.0:
                clipped += 1
            else:
                free_mass += v[i]
        if free_mass <= 0.0:
            break
        refined = (target - clipped) / free_mass
        same = True
        for i in range(n):
            if (refined * v[i] >= 1.0) != (alpha * v[i] >= 1.0):
                same = False
                break
        alpha = refined
        if same:
            break
    return alpha
