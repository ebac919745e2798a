"""Pure numpy implementations of the hot kernels.

Same contracts as the compiled module in _speedups.pyx; the state
dimension of the CTC recursions and the rows of the edit-distance table
are vectorized so the fallback stays usable for training at desk scale.
"""

import numpy as np

NEG_INF = float("-inf")


def _skip_mask(ext, blank):
    """Allowed s-2 -> s transitions in the blank-interleaved target."""
    mask = np.zeros(ext.size, dtype=bool)
    if ext.size > 2:
        mask[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return mask


def _logaddexp3(a, b, c):
    return np.logaddexp(np.logaddexp(a, b), c)


def ctc_loss(log_probs, ext, blank=0):
    """Negative log probability of the blank-interleaved target `ext`.

    log_probs: [T, S] per-frame log distributions.
    ext: int32 target interleaved with blanks, length 2*L+1.
    Caller guarantees feasibility (T at least the minimal path length).
    """
    T = log_probs.shape[0]
    L = ext.size
    emit = log_probs[:, ext]
    skip = _skip_mask(ext, blank)

    alpha = np.full(L, NEG_INF)
    alpha[0] = emit[0, 0]
    if L > 1:
        alpha[1] = emit[0, 1]
    for t in range(1, T):
        prev1 = np.full(L, NEG_INF)
        prev1[1:] = alpha[:-1]
        prev2 = np.full(L, NEG_INF)
        prev2[2:] = np.where(skip[2:], alpha[:-2], NEG_INF)
        alpha = _logaddexp3(alpha, prev1, prev2) + emit[t]
    if L > 1:
        return float(-np.logaddexp(alpha[-1], alpha[-2]))
    return float(-alpha[-1])


def ctc_loss_grad(log_probs, ext, blank=0):
    """Forward-backward pass: returns (loss, gamma).

    gamma[t, c] is the posterior probability of emitting class c at frame
    t given the target; each row sums to 1.
    """
    T, S = log_probs.shape
    L = ext.size
    emit = log_probs[:, ext]
    skip = _skip_mask(ext, blank)
    # skip_from[s]: the s -> s+2 transition is allowed
    skip_from = np.concatenate((skip[2:], [False, False]))

    alphas = np.full((T, L), NEG_INF)
    alphas[0, 0] = emit[0, 0]
    if L > 1:
        alphas[0, 1] = emit[0, 1]
    for t in range(1, T):
        a = alphas[t - 1]
        prev1 = np.full(L, NEG_INF)
        prev1[1:] = a[:-1]
        prev2 = np.full(L, NEG_INF)
        prev2[2:] = np.where(skip[2:], a[:-2], NEG_INF)
        alphas[t] = _logaddexp3(a, prev1, prev2) + emit[t]

    betas = np.full((T, L), NEG_INF)
    betas[T - 1, L - 1] = 0.0
    if L > 1:
        betas[T - 1, L - 2] = 0.0
    for t in range(T - 2, -1, -1):
        b_emit = betas[t + 1] + emit[t + 1]
        next1 = np.full(L, NEG_INF)
        next1[:-1] = b_emit[1:]
        next2 = np.full(L, NEG_INF)
        if L > 2:
            next2[:-2] = np.where(skip_from[:-2], b_emit[2:], NEG_INF)
        betas[t] = _logaddexp3(b_emit, next1, next2)

    if L > 1:
        log_p = np.logaddexp(alphas[T - 1, L - 1], alphas[T - 1, L - 2])
    else:
        log_p = alphas[T - 1, L - 1]
    if log_p == NEG_INF:
        # infeasible target: no occupancy mass to distribute
        return float("inf"), np.zeros((T, S))

    occupancy = np.exp(alphas + betas - log_p)
    gamma = np.zeros((T, S))
    np.add.at(gamma, (np.arange(T)[:, None], ext[None, :]), occupancy)
    return float(-log_p), gamma


def levenshtein(a, b):
    """Unit-cost edit distance between two int32 code sequences."""
    n = a.size
    m = b.size
    if n == 0:
        return int(m)
    if m == 0:
        return int(n)
    row = np.arange(m + 1, dtype=np.int64)
    offsets = np.arange(m + 1, dtype=np.int64)
    for i in range(n):
        sub = row[:-1] + (b != a[i])
        new = np.concatenate(([i + 1], np.minimum(row[1:] + 1, sub)))
        # insertion term new[j] = min(new[j], new[j-1]+1) is a prefix min
        # of new[j]-j, since relaxing by +1 per step cancels the offset
        row = np.minimum.accumulate(new - offsets) + offsets
    return int(row[-1])
