"""Start-multi-stop pair correlation of two time-tag streams and g2 normalization.

Delays are t_b - t_a in integer picoseconds. Bin k covers
[(k - 1/2) w, (k + 1/2) w) for k = -n .. n, so the zero-delay bin is centered.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError, ZeroNormalization

DEFAULT_BIN = 0.924e-9
DEFAULT_TAU_MAX = 1.2e-6
DEFAULT_NORM_WINDOW = (0.7e-6, 1.1e-6)


@dataclass(frozen=True)
class RawHistogram:
    bin_width_ps: int
    n_half: int
    counts: np.ndarray = field(repr=False)
    totals: tuple
    duration: float
    empty: bool = False

    @property
    def bin_width(self):
        return self.bin_width_ps * 1e-12

    @property
    def tau_max(self):
        return (self.n_half + 0.5) * self.bin_width

    @property
    def taus(self):
        """Bin centers (s)."""
        return np.arange(-self.n_half, self.n_half + 1) * self.bin_width

    @property
    def n_pairs(self):
        return int(self.counts.sum())


@dataclass(frozen=True)
class G2Histogram(RawHistogram):
    norm_window: tuple = DEFAULT_NORM_WINDOW
    norm_value: float = 1.0
    g2: np.ndarray = field(default=None, repr=False)
    sigma: np.ndarray = field(default=None, repr=False)
    norm_sides: str = "both"

    @property
    def norm_mask(self):
        return norm_mask(self.taus, self.norm_window, self.norm_sides)

    @property
    def tau_ns(self):
        return self.taus * 1e9


def _grid(bin_width, tau_max):
    if not bin_width > 0:
        raise ValidationError("bin width must be positive")
    w = int(round(bin_width * 1e12))
    if w < 1:
        raise ValidationError("bin width below 1 ps")
    n_half = int(round(tau_max / bin_width))
    if n_half < 1:
        raise ValidationError("tau_max must be at least one bin width")
    return w, n_half


def _count_chunk(a, b, w, n_half):
    span = (2 * n_half + 1) * w  # doubled half-range
    b2 = 2 * b
    a2 = 2 * a
    lo = np.searchsorted(b2, a2 - span, side="left")
    hi = np.searchsorted(b2, a2 + span, side="left")
    cnt = hi - lo
    hist = np.zeros(2 * n_half + 1, dtype=np.int64)
    if cnt.size == 0:
        return hist
    order = np.argsort(-cnt, kind="stable")
    lo, cnt, a_sorted = lo[order], cnt[order], a[order]
    active = int(np.count_nonzero(cnt))
    j = 0
    while active:
        idx = lo[:active] + j
        d = b[idx] - a_sorted[:active]
        k = (2 * d + w) // (2 * w) + n_half
        hist += np.bincount(k, minlength=hist.size)
        j += 1
        while active and cnt[active - 1] <= j:
            active -= 1
    return hist


def cross_correlate(a, b, bin_width=DEFAULT_BIN, tau_max=DEFAULT_TAU_MAX, threads=1):
    """Histogram of all pairs t_b - t_a within the +-tau_max range.

    ``a`` and ``b`` are :class:`TimeTagStream` objects (or sorted int64 tag
    arrays). ``tau_max`` is rounded to a whole number of bins. With
    ``threads > 1`` the start stream is split into contiguous chunks whose
    integer histograms are summed, so the result does not depend on the
    thread count.
    """
    ta = np.asarray(getattr(a, "tags", a), dtype=np.int64)
    tb = np.asarray(getattr(b, "tags", b), dtype=np.int64)
    duration = float(getattr(a, "duration", 0.0) or getattr(b, "duration", 0.0))
    w, n_half = _grid(bin_width, tau_max)
    for t in (ta, tb):
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise ValidationError("time tags must be sorted")
    if ta.size == 0 or tb.size == 0:
        return RawHistogram(w, n_half, np.zeros(2 * n_half + 1, dtype=np.int64),
                            (int(ta.size), int(tb.size)), duration, empty=True)
    threads = max(1, int(threads))
    if threads == 1:
        hist = _count_chunk(ta, tb, w, n_half)
    else:
        parts = np.array_split(ta, threads)
        with ThreadPoolExecutor(threads) as pool:
            hists = list(pool.map(lambda p: _count_chunk(p, tb, w, n_half), parts))
        hist = np.sum(hists, axis=0)
    return RawHistogram(w, n_half, hist, (int(ta.size), int(tb.size)), duration)


def norm_mask(taus, norm_window, sides="both"):
    """Boolean selection of the bins whose |tau| lies in ``norm_window``."""
    lo, hi = norm_window
    mag = np.abs(taus)
    sel = (mag >= lo * (1 - 1e-12)) & (mag <= hi * (1 + 1e-12))
    if sides == "positive":
        sel &= taus > 0
    elif sides != "both":
        raise ValidationError(f"sides must be 'both' or 'positive', got {sides!r}")
    return sel


def normalize_g2(raw, norm_window=DEFAULT_NORM_WINDOW, sides="both"):
    """Divide every bin by the mean count of the bins whose |tau| lies in ``norm_window``.

    ``sides="positive"`` uses only tau > 0 bins. Per-bin standard errors use
    Poisson variance max(counts, 1) scaled by the normalization.
    """
    lo, hi = norm_window
    if not 0 <= lo < hi:
        raise ValidationError(f"bad normalization window {norm_window!r}")
    if hi > raw.tau_max:
        raise ValidationError(
            f"normalization window reaches {hi:.3g} s beyond tau_max {raw.tau_max:.3g} s")
    sel = norm_mask(raw.taus, norm_window, sides)
    if not sel.any():
        raise ValidationError("normalization window contains no bins")
    norm = raw.counts[sel].mean()
    if norm <= 0:
        raise ZeroNormalization("no counts in the normalization window")
    g2 = raw.counts / norm
    sigma = np.sqrt(np.maximum(raw.counts, 1)) / norm
    return G2Histogram(raw.bin_width_ps, raw.n_half, raw.counts, raw.totals, raw.duration,
                       raw.empty, tuple(norm_window), float(norm), g2, sigma, sides)


def g2_from_streams(a, b, bin_width=DEFAULT_BIN, tau_max=DEFAULT_TAU_MAX,
                    norm_window=DEFAULT_NORM_WINDOW, threads=1, sides="both"):
    return normalize_g2(cross_correlate(a, b, bin_width, tau_max, threads), norm_window, sides)
