"""Per-pixel uncertainty measures over posterior/logit sample cubes.

All five measures are Monte-Carlo estimators over a shared cube of sampled
pixel probabilities:

* predictive entropy   H( mean over all samples )        - total
* expected entropy     mean over weights of H( p(theta) ) - aleatoric
* mutual information   PE - EE                            - epistemic
* expected pairwise KL mean KL between weight samples     - epistemic
* pixel variance       Var over weights of sigmoid(mu)    - epistemic

Entropies and divergences are in nats.  Per-pixel Bernoulli factorization
makes the expected pairwise KL an image-level quantity (a sum over pixels),
so no aggregation applies to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, UndefinedMeasureError

PROB_EPS = 1e-7


def _clamp(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def bernoulli_entropy(p):
    p = _clamp(np.asarray(p, dtype=np.float64))
    q = 1.0 - p
    return -(p * np.log(p) + q * np.log(q))


def bernoulli_kl(p, q):
    p = _clamp(np.asarray(p, dtype=np.float64))
    q = _clamp(np.asarray(q, dtype=np.float64))
    return p * np.log(p / q) + (1.0 - p) * np.log((1.0 - p) / (1.0 - q))


@dataclass
class SampleCube:
    """Pixel probabilities for n_theta weight samples x m_eta logit samples.

    ``probs`` has shape (n_theta, m_eta, S); ``mean_logit_probs`` holds
    sigmoid of the mean-head logits per weight sample (n_theta, S).  All
    probabilities are clamped to [eps, 1-eps] on construction.
    """

    probs: np.ndarray
    mean_logit_probs: np.ndarray
    hw: tuple = ()
    mean_probs_per_theta: np.ndarray = field(init=False)

    def __post_init__(self):
        self.probs = _clamp(np.asarray(self.probs, dtype=np.float64))
        self.mean_logit_probs = _clamp(
            np.asarray(self.mean_logit_probs, dtype=np.float64))
        if self.probs.ndim != 3:
            raise ShapeError("probs must be (n_theta, m_eta, S)")
        if self.mean_logit_probs.shape != (self.probs.shape[0],
                                           self.probs.shape[2]):
            raise ShapeError("mean_logit_probs must be (n_theta, S)")
        self.mean_probs_per_theta = self.probs.mean(axis=1)

    @property
    def n_theta(self):
        return self.probs.shape[0]

    @property
    def n_pixels(self):
        return self.probs.shape[2]


def predictive_entropy(cube: SampleCube):
    """H over the fully pooled probability, per pixel."""
    return bernoulli_entropy(cube.mean_probs_per_theta.mean(axis=0))


def expected_entropy(cube: SampleCube):
    """Mean over weight samples of the per-sample marginal entropy."""
    return bernoulli_entropy(cube.mean_probs_per_theta).mean(axis=0)


def mutual_information(cube: SampleCube, floor: bool = True):
    """PE - EE per pixel; nonnegative with shared samples up to rounding,
    floored at zero unless ``floor`` is False."""
    mi = predictive_entropy(cube) - expected_entropy(cube)
    return np.maximum(mi, 0.0) if floor else mi


def epkl_map(cube: SampleCube):
    """Per-pixel mean pairwise KL over ordered weight-sample pairs."""
    if cube.n_theta < 2:
        raise UndefinedMeasureError(
            "expected pairwise KL needs at least two weight samples")
    p = _clamp(cube.mean_probs_per_theta)
    q = 1.0 - p
    n = cube.n_theta
    lp, lq = np.log(p), np.log(q)
    # sum_{i != j} KL(p_i || p_j) expanded over pixels:
    #   n * sum_i (p_i lp_i + q_i lq_i) - (sum p)(sum lp) - (sum q)(sum lq)
    self_term = (p * lp + q * lq).sum(axis=0)
    total = n * self_term - p.sum(axis=0) * lp.sum(axis=0) \
        - q.sum(axis=0) * lq.sum(axis=0)
    return total / (n * (n - 1))


def epkl(cube: SampleCube) -> float:
    """Image-level expected pairwise KL (sum of the per-pixel map)."""
    return float(epkl_map(cube).sum())


def pixel_variance(cube: SampleCube):
    """Population variance over weight samples of sigmoid(mean logits)."""
    return cube.mean_logit_probs.var(axis=0)


def aggregate(pixel_map, strategy: str, hw, patch: int = 10) -> float:
    """Image-level score: total over pixels or the hottest k x k window sum.

    Patch windows slide with stride 1 over valid positions only.
    """
    m = np.asarray(pixel_map, dtype=np.float64).reshape(hw)
    if strategy == "sum":
        return float(m.sum())
    if strategy != "patch":
        raise ConfigError(f"unknown aggregation {strategy!r}")
    h, w = m.shape
    if patch > h or patch > w:
        raise ConfigError(f"patch size {patch} exceeds image extents {hw}")
    # integral image -> all window sums at once
    c = np.zeros((h + 1, w + 1))
    c[1:, 1:] = m.cumsum(axis=0).cumsum(axis=1)
    k = patch
    windows = c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]
    return float(windows.max())


@dataclass
class UncertaintyReport:
    """Maps and image-level scores for one image under one model."""

    pe: np.ndarray
    ee: np.ndarray
    mi: np.ndarray
    mi_raw: np.ndarray
    pv: np.ndarray
    epkl: float | None
    hw: tuple
    scores: dict = field(default_factory=dict)


def compute_report(cube: SampleCube, hw, patch: int = 10,
                   epkl_defined: bool = True) -> UncertaintyReport:
    pe = predictive_entropy(cube)
    ee = expected_entropy(cube)
    mi_raw = pe - ee
    pv = pixel_variance(cube)
    ep = None
    if epkl_defined and cube.n_theta >= 2:
        ep = epkl(cube)
    report = UncertaintyReport(pe=pe, ee=ee, mi=np.maximum(mi_raw, 0.0),
                               mi_raw=mi_raw, pv=pv, epkl=ep, hw=hw)
    maps = {"predictive_entropy": report.pe, "expected_entropy": report.ee,
            "mutual_information": report.mi, "pixel_variance": report.pv}
    for name, pixel_map in maps.items():
        for strategy in ("sum", "patch"):
            report.scores[(name, strategy)] = aggregate(
                pixel_map, strategy, hw, patch)
    report.scores[("epkl", "none")] = ep
    return report
