"""Bracketing root search for monotone (possibly discontinuous) functions."""

from __future__ import annotations

import math
from typing import Callable, Tuple


def bracket_increasing(
    fun: Callable[[float], float],
    lo: float,
    hi: float,
    f_lo: float,
    f_hi: float,
    xtol: float,
    max_iter: int = 400,
    secant: bool = True,
) -> Tuple[float, float, float, float, int]:
    """Shrink [lo, hi] around the sign change of a non-decreasing function.

    Requires f(lo) < 0 <= f(hi).  Returns ``(lo, hi, f(lo), f(hi), n_evals)``
    with ``hi - lo <= xtol`` (or the floats between them exhausted).  With
    ``secant`` set, Illinois false-position steps are interleaved with
    bisection so that smooth roots converge superlinearly while jumps still
    shrink at least geometrically.
    """
    n = 0
    side = 0
    g_lo, g_hi = f_lo, f_hi
    last_width = hi - lo
    while hi - lo > xtol and n < max_iter:
        width = hi - lo
        mid = 0.5 * (lo + hi)
        use_bisect = not secant or not (math.isfinite(g_lo) and math.isfinite(g_hi)) or g_hi <= g_lo
        if n % 3 == 2 and width > 0.5 * last_width:
            use_bisect = True
        if n % 3 == 2:
            last_width = width
        if use_bisect:
            m = mid
        else:
            m = (lo * g_hi - hi * g_lo) / (g_hi - g_lo)
            guard = min(0.5 * xtol, 0.25 * width)
            m = min(max(m, lo + guard), hi - guard)
        if not (lo < m < hi):
            break
        fm = fun(m)
        n += 1
        if fm >= 0:
            hi, f_hi, g_hi = m, fm, fm
            if side == 1:
                g_lo *= 0.5
            side = 1
        else:
            lo, f_lo, g_lo = m, fm, fm
            if side == -1:
                g_hi *= 0.5
            side = -1
    return lo, hi, f_lo, f_hi, n
