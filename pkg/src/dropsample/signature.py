"""Truncated path signatures of planar piecewise-linear paths.

A signature truncated at ``order`` is a tuple ``(S1, S2, ..., S_order)``
where ``S_n`` is an ``n``-dimensional ``2 x ... x 2`` array of iterated
integrals; the level-0 term is the constant 1 and is not stored.
"""
import numpy as np

MAX_ORDER = 3


class SignatureOrderError(ValueError):
    pass


def _check_order(order):
    if order not in (1, 2, 3):
        raise SignatureOrderError(f"signature order must be 1, 2 or 3, got {order!r}")


def path_signature_segment(d, order):
    """Closed-form signature of the straight segment with displacement ``d``.

    Level ``n`` is ``d^{(x)n} / n!``.
    """
    _check_order(order)
    d = np.asarray(d, dtype=np.float64).reshape(2)
    levels = [d.copy()]
    fact = 1.0
    cur = d
    for n in range(2, order + 1):
        fact *= n
        cur = np.multiply.outer(cur, d)
        levels.append(cur / fact)
    return tuple(levels)


def zero_signature(order):
    """Signature of the constant path, the identity for concatenation."""
    _check_order(order)
    return tuple(np.zeros((2,) * n) for n in range(1, order + 1))


def chen_concatenate(sig_a, sig_b, order=None):
    """Signature of path A followed by path B (truncated tensor product)."""
    if len(sig_a) != len(sig_b):
        raise SignatureOrderError(
            f"cannot concatenate signatures of orders {len(sig_a)} and {len(sig_b)}"
        )
    if order is None:
        order = len(sig_a)
    if order != len(sig_a):
        raise SignatureOrderError(f"signatures have order {len(sig_a)}, expected {order}")
    _check_order(order)
    out = []
    for n in range(1, order + 1):
        level = sig_a[n - 1] + sig_b[n - 1]
        for i in range(1, n):
            level = level + np.multiply.outer(sig_a[i - 1], sig_b[n - i - 1])
        out.append(level)
    return tuple(out)


def path_signature(points, order):
    """Signature of the polyline through ``points`` via Chen's identity."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    sig = zero_signature(order)
    for d in np.diff(pts, axis=0):
        sig = chen_concatenate(sig, path_signature_segment(d, order), order)
    return sig


def flatten(sig):
    """Concatenate levels in lexicographic word order."""
    return np.concatenate([np.ravel(level) for level in sig])


def channel_count(order):
    """Number of maps for a truncation: 1 + 2 + 4 + 8 cumulatively."""
    if order == 0:
        return 1
    _check_order(order)
    return 2 ** (order + 1) - 1


def channel_names(order):
    names = ["sig0"]
    words = [""]
    for _ in range(order):
        words = [w + c for w in words for c in "xy"]
        names.extend("sig_" + w for w in words)
    return names
