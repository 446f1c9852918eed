"""Image-comparison metrics and the aggregate accuracy score.

All metrics operate on 2D arrays of values in [0, 1]. Histograms use a
fixed [0, 1] range so that identical images always share binning, which
makes MI(a, a) equal the histogram entropy H(a) exactly.

Aggregation to percentages: each metric is mapped per slice into a [0, 1]
"goodness" score (1 = perfect) and averaged over all slices of all gap
groups:

* entropy difference -> 1 - ED            (ED already relative, clipped)
* mutual information -> 1 - (MI(G,G) - MI(G,R)) / MI(G,G)
* RMSE               -> 1 - RMSE
* SSIM               -> SSIM              (clipped at 0)

The overall score is the mean of the four component percentages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentMismatch, DimensionMismatch

DEFAULT_BINS = 256
_EPS = 1e-12


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _histogram_entropy(a: np.ndarray, bins: int) -> float:
    counts, _ = np.histogram(a, bins=bins, range=(0.0, 1.0))
    p = counts[counts > 0] / a.size
    return float(-np.sum(p * np.log2(p)))


def entropy(a: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Histogram entropy in bits over the fixed [0, 1] range."""
    return _histogram_entropy(np.asarray(a, dtype=np.float64), bins)


def mutual_information(a: np.ndarray, b: np.ndarray,
                       bins: int = DEFAULT_BINS) -> float:
    """Mutual information in bits from the bins x bins joint histogram."""
    a, b = _check_pair(a, b)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    joint, _, _ = np.histogram2d(a.ravel(), b.ravel(), bins=bins,
                                 range=((0.0, 1.0), (0.0, 1.0)))
    pj = joint / a.size
    pa = pj.sum(axis=1)
    pb = pj.sum(axis=0)
    outer = np.outer(pa, pb)
    nz = pj > 0
    return float(np.sum(pj[nz] * np.log2(pj[nz] / outer[nz])))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Global (single-window) structural similarity for [0, 1] images."""
    a, b = _check_pair(a, b)
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    mu_a = a.mean()
    mu_b = b.mean()
    var_a = a.var()
    var_b = b.var()
    cov = ((a - mu_a) * (b - mu_b)).mean()
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(num / den)


def entropy_difference(a: np.ndarray, b: np.ndarray,
                       bins: int = DEFAULT_BINS) -> float:
    """Relative entropy difference |H(a) - H(b)| / max(H(a), eps)."""
    a, b = _check_pair(a, b)
    ha = _histogram_entropy(a, bins)
    hb = _histogram_entropy(b, bins)
    num = abs(ha - hb)
    if num == 0.0:
        return 0.0
    return float(num / max(ha, _EPS))


@dataclass
class AccuracyReport:
    """Per-slice metrics, per-gap averages, and aggregate percentages."""

    per_slice: list[dict]                 # gap, index, ed, mi, rmse, ssim
    per_gap: dict[int, dict[str, float]]  # gap -> mean ed/mi/rmse/ssim
    a_ed_pct: float
    a_mi_pct: float
    a_rmse_pct: float
    a_ssim_pct: float
    a_pct: float
    mean_time_s: float = 0.0
    bins: int = DEFAULT_BINS

    def to_dict(self) -> dict:
        return {
            "per_slice": self.per_slice,
            "per_gap": {str(k): v for k, v in self.per_gap.items()},
            "A_ED_pct": self.a_ed_pct,
            "A_MI_pct": self.a_mi_pct,
            "A_RMSE_pct": self.a_rmse_pct,
            "A_SSIM_pct": self.a_ssim_pct,
            "A_pct": self.a_pct,
            "mean_time_s": self.mean_time_s,
            "bins": self.bins,
        }

    def to_text(self) -> str:
        lines = []
        for gap in sorted(self.per_gap):
            g = self.per_gap[gap]
            lines.append(
                f"gap={gap}  MI={g['mi']:.4f}  EN_D={g['ed']:.4f}  "
                f"RMSE={g['rmse']:.5f}  SSIM={g['ssim']:.4f}")
        lines.append(f"A_ED% = {self.a_ed_pct:.3f}")
        lines.append(f"A_MI% = {self.a_mi_pct:.3f}")
        lines.append(f"A_RMSE% = {self.a_rmse_pct:.3f}")
        lines.append(f"A_SSIM% = {self.a_ssim_pct:.3f}")
        lines.append(f"A% = {self.a_pct:.3f}")
        lines.append(f"mean_time_s = {self.mean_time_s:.3f}")
        return "\n".join(lines) + "\n"


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def accuracy_percent(ground_by_gap: dict[int, list[np.ndarray]],
                     recon_by_gap: dict[int, list[np.ndarray]],
                     timings: list[float] | None = None,
                     bins: int = DEFAULT_BINS) -> AccuracyReport:
    """Aggregate accuracy across gap groups of (ground, reconstructed) slices.

    Both dicts map a gap label to aligned lists of images. The MI deficit is
    normalized by MI(G, G) (= H(G)); a constant ground image has no
    information to lose, so its deficit is defined as 0 when the
    reconstruction is also constant-equal, else 1.
    """
    if set(ground_by_gap) != set(recon_by_gap) or not ground_by_gap:
        raise AlignmentMismatch("ground and recon gap groups differ")

    per_slice = []
    per_gap: dict[int, dict[str, float]] = {}
    scores = {"ed": [], "mi": [], "rmse": [], "ssim": []}

    for gap in sorted(ground_by_gap):
        gs = ground_by_gap[gap]
        rs = recon_by_gap[gap]
        if len(gs) != len(rs) or not gs:
            raise AlignmentMismatch(f"gap {gap}: slice lists not aligned")
        gap_rows = []
        for i, (g_img, r_img) in enumerate(zip(gs, rs)):
            ed = entropy_difference(g_img, r_img, bins)
            mi_gr = mutual_information(g_img, r_img, bins)
            mi_gg = entropy(g_img, bins)
            if mi_gg > _EPS:
                mi_deficit = _clip01((mi_gg - mi_gr) / mi_gg)
            else:
                mi_deficit = 0.0 if rmse(g_img, r_img) < _EPS else 1.0
            e = rmse(g_img, r_img)
            s = ssim(g_img, r_img)
            row = {"gap": gap, "index": i, "ed": ed, "mi": mi_gr,
                   "rmse": e, "ssim": s}
            per_slice.append(row)
            gap_rows.append(row)
            scores["ed"].append(1.0 - _clip01(ed))
            scores["mi"].append(1.0 - mi_deficit)
            scores["rmse"].append(1.0 - _clip01(e))
            scores["ssim"].append(_clip01(s))
        per_gap[gap] = {
            k: float(np.mean([r[k] for r in gap_rows]))
            for k in ("ed", "mi", "rmse", "ssim")
        }

    a_ed = 100.0 * float(np.mean(scores["ed"]))
    a_mi = 100.0 * float(np.mean(scores["mi"]))
    a_rmse = 100.0 * float(np.mean(scores["rmse"]))
    a_ssim = 100.0 * float(np.mean(scores["ssim"]))
    a = (a_ed + a_mi + a_rmse + a_ssim) / 4.0
    mean_time = float(np.mean(timings)) if timings else 0.0
    return AccuracyReport(per_slice, per_gap, a_ed, a_mi, a_rmse, a_ssim, a,
                          mean_time, bins)
