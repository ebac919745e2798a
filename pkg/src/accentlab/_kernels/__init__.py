"""Hot numeric kernels with a compiled fast path.

The Cython extension (_speedups) is used when it imported cleanly; otherwise
the pure-numpy twin (_fallback) takes over.  Set ACCENTLAB_PURE_PYTHON=1 to
force the fallback regardless.  Both backends implement the same contracts
and are cross-checked in the test suite.
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("ACCENTLAB_PURE_PYTHON"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _speedups as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"


def _as_f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def _as_i32(x):
    if isinstance(x, str):
        x = [ord(c) for c in x]
    return np.ascontiguousarray(x, dtype=np.int32)


def ctc_loss(log_probs, ext, blank=0):
    """-log P(label | log_probs) summed over all CTC alignments.

    log_probs: [T, S] log-probability rows, ext: blank-interleaved label
    sequence.  Returns +inf when no alignment fits in T frames.
    """
    return float(_impl.ctc_loss(_as_f64(log_probs), _as_i32(ext), blank))


def ctc_loss_grad(log_probs, ext, blank=0):
    """Loss plus gamma, the [T, S] posterior symbol-occupancy matrix.

    Rows of gamma sum to 1 for feasible targets; the loss gradient wrt
    logits is softmax(logits) - gamma.
    """
    loss, gamma = _impl.ctc_loss_grad(_as_f64(log_probs), _as_i32(ext), blank)
    return float(loss), np.asarray(gamma)


def levenshtein(a, b):
    """Unit-cost edit distance between two sequences (str or int array)."""
    return int(_impl.levenshtein(_as_i32(a), _as_i32(b)))
