"""Skin-color feature: opponent chroma plane, masked histogram, Gaussian
summary, and histogram comparison.

The verification score uses the histogram of Cr - Cb over skin pixels; the
Gaussian summary is kept as a cheap diagnostic of the chroma distribution.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError
from .imaging import FaceSample, SkinBounds, skin_mask

log = logging.getLogger(__name__)


@dataclass
class ChromaHistogram:
    """Normalized histogram over a fixed [lo, hi) range."""

    bins: int
    lo: float
    hi: float
    weights: np.ndarray
    pixel_count: int

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("need at least 2 bins")
        if not self.lo < self.hi:
            raise ValueError(f"empty histogram range [{self.lo}, {self.hi}]")
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.bins,):
            raise ValueError("weight vector length must equal bins")
        if self.weights.size and self.weights.min() < 0:
            raise ValueError("negative histogram weight")
        if self.pixel_count > 0 and abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights of a populated histogram must sum to 1")

    def bin_centers(self) -> np.ndarray:
        width = (self.hi - self.lo) / self.bins
        return self.lo + width * (np.arange(self.bins) + 0.5)

    def same_binning(self, other: "ChromaHistogram") -> bool:
        return (self.bins == other.bins and self.lo == other.lo
                and self.hi == other.hi)


@dataclass
class GaussianSummary:
    mean: float
    std: float


def opponent_chroma(sample: FaceSample) -> np.ndarray:
    """Cr - Cb plane; zero for achromatic pixels, positive for skin tones."""
    return sample.cr - sample.cb


def chroma_histogram(plane, mask, bins: int = 64, lo: float = -128.0,
                     hi: float = 128.0) -> ChromaHistogram:
    """Histogram of the masked-in pixels over `bins` equal-width bins.

    Values outside [lo, hi] are counted in the end bins; weights sum to 1.
    """
    plane = np.asarray(plane, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if plane.shape != mask.shape:
        raise ValueError(f"plane shape {plane.shape} != mask shape {mask.shape}")
    values = plane[mask]
    if values.size == 0:
        raise EmptyMaskError("mask selects no pixels")
    if not 2 <= bins:
        raise ValueError("need at least 2 bins")
    if not lo < hi:
        raise ValueError(f"empty histogram range [{lo}, {hi}]")
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(int)
    idx = np.clip(idx, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(float)
    return ChromaHistogram(bins=bins, lo=lo, hi=hi,
                           weights=counts / values.size,
                           pixel_count=int(values.size))


def fit_gaussian(plane, mask) -> GaussianSummary:
    """Mean and population standard deviation of the masked-in pixels."""
    plane = np.asarray(plane, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if plane.shape != mask.shape:
        raise ValueError(f"plane shape {plane.shape} != mask shape {mask.shape}")
    values = plane[mask]
    if values.size == 0:
        raise EmptyMaskError("mask selects no pixels")
    return GaussianSummary(mean=float(values.mean()), std=float(values.std()))


def histogram_distance(a: ChromaHistogram, b: ChromaHistogram) -> float:
    """Bhattacharyya distance 1 - sum_k sqrt(a_k b_k), in [0, 1]."""
    if not a.same_binning(b):
        raise ValueError("histograms use different binnings")
    bc = float(np.sqrt(a.weights * b.weights).sum())
    return float(min(1.0, max(0.0, 1.0 - bc)))


def average_histograms(hists) -> ChromaHistogram:
    """Bin-wise mean of histograms sharing one binning, renormalized."""
    hists = list(hists)
    if not hists:
        raise ValueError("no histograms to average")
    first = hists[0]
    for other in hists[1:]:
        if not first.same_binning(other):
            raise ValueError("histograms use different binnings")
    weights = np.mean([h.weights for h in hists], axis=0)
    total = weights.sum()
    if total > 0:
        weights = weights / total
    return ChromaHistogram(bins=first.bins, lo=first.lo, hi=first.hi,
                           weights=weights,
                           pixel_count=int(sum(h.pixel_count for h in hists)))


def opponent_histogram(sample: FaceSample, bins: int = 64, lo: float = -128.0,
                       hi: float = 128.0,
                       bounds: SkinBounds | None = None) -> ChromaHistogram:
    """Skin-masked histogram of the opponent chroma plane.

    Hair exclusion is best effort: if the skin mask is empty the full crop
    is used instead, with a warning.
    """
    plane = opponent_chroma(sample)
    mask = skin_mask(sample.cr, sample.cb, bounds)
    if not mask.any():
        log.warning("skin mask empty for subject %r; falling back to the "
                    "full crop", sample.subject_id)
        mask = np.ones_like(mask, dtype=bool)
    return chroma_histogram(plane, mask, bins=bins, lo=lo, hi=hi)
