"""Foreground color-transfer methods for composite synthesis.

Each method recolors the foreground of a target image so its color statistics
match a reference region, leaving every background pixel bit-identical. All
four share the same signature and are registered under short tags so configs
and manifests can name them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import (
    ImageRGB,
    MaskImage,
    MaskError,
    RGB,
    lab_to_rgb_pixels,
    rgb_to_lab_pixels,
    rgb_to_ycbcr_pixels,
    ycbcr_to_rgb_pixels,
)

REINHARD_LAB = "REINHARD_LAB"
XIAO_RGB = "XIAO_RGB"
FECKER_HIST = "FECKER_HIST"
PITIE_IDT = "PITIE_IDT"

METHOD_TAGS = (REINHARD_LAB, XIAO_RGB, FECKER_HIST, PITIE_IDT)

_STD_FLOOR = 1e-6  # degenerate-channel threshold for moment scaling
_COV_REG = 1e-6  # ridge added to covariances before eigendecomposition
_HIST_BINS = 256
_IDT_ITERATIONS = 10


@dataclass(frozen=True)
class TransferOutcome:
    """Result of applying a registered method to a composite candidate.

    `seed` is the value that, together with `method`, reproduces the image
    exactly through apply_transfer (it only influences the stochastic method).
    """

    image: ImageRGB
    method: str
    clamp_fraction: float
    seed: int = 0


@dataclass(frozen=True)
class TransferMatrices:
    """Whitening chain for one pixel cloud: x -> scaling @ rotation @ (x + translation).

    `rotation` is orthonormal and `scaling` diagonal with nonnegative entries;
    applying the chain yields zero mean and identity covariance.
    """

    translation: np.ndarray  # (3,) offset, -mean
    rotation: np.ndarray     # (3, 3) orthonormal
    scaling: np.ndarray      # (3, 3) diagonal, nonnegative

    def whiten(self, px: np.ndarray) -> np.ndarray:
        return (px + self.translation) @ (self.scaling @ self.rotation).T

    def color(self, px: np.ndarray) -> np.ndarray:
        inv = self.rotation.T @ np.diag(1.0 / np.diag(self.scaling))
        return px @ inv.T - self.translation


def _gather(target: ImageRGB, target_mask: MaskImage,
            reference: ImageRGB, reference_mask: MaskImage):
    """Validate inputs and pull out the two foreground pixel sets."""
    for img, mask, name in ((target, target_mask, "target"),
                            (reference, reference_mask, "reference")):
        if img.space != RGB:
            raise ValueError(f"{name} image must be RGB")
        if (img.height, img.width) != (mask.height, mask.width):
            raise MaskError(f"{name} image/mask dimension mismatch")
        if mask.foreground_count() == 0:
            raise MaskError(f"{name} mask has no foreground pixels")
    return target.data[target_mask.data], reference.data[reference_mask.data]


def _rebuild(target: ImageRGB, target_mask: MaskImage, fg: np.ndarray) -> ImageRGB:
    out = target.data.copy()
    out[target_mask.data] = np.clip(fg, 0.0, 1.0)
    return ImageRGB(out, RGB)


def _moment_match_1ch(t: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Scale-and-shift one channel; degenerate target channels jump to the
    reference mean."""
    mu_t, mu_r = t.mean(), r.mean()
    sd_t, sd_r = t.std(), r.std()
    if sd_t < _STD_FLOOR:
        return np.full_like(t, mu_r)
    return (sd_r / sd_t) * (t - mu_t) + mu_r


def reinhard_transfer(target: ImageRGB, target_mask: MaskImage,
                      reference: ImageRGB, reference_mask: MaskImage) -> ImageRGB:
    """Per-channel mean/std matching in the decorrelated log-LMS space."""
    fg_t, fg_r = _gather(target, target_mask, reference, reference_mask)
    lab_t = rgb_to_lab_pixels(fg_t)
    lab_r = rgb_to_lab_pixels(fg_r)
    out = np.stack(
        [_moment_match_1ch(lab_t[:, c], lab_r[:, c]) for c in range(3)], axis=1
    )
    return _rebuild(target, target_mask, lab_to_rgb_pixels(out))


def whitening_matrices(mean: np.ndarray, cov: np.ndarray) -> TransferMatrices:
    """Build the translate/rotate/scale chain that whitens a pixel cloud.

    The covariance gets a small ridge so rank-deficient clouds stay invertible,
    and eigenvector signs are fixed (largest-magnitude component positive) so
    the decomposition is deterministic.
    """
    vals, vecs = np.linalg.eigh(cov + _COV_REG * np.eye(3))
    for j in range(3):
        k = np.argmax(np.abs(vecs[:, j]))
        if vecs[k, j] < 0:
            vecs[:, j] = -vecs[:, j]
    vals = np.clip(vals, _COV_REG, None)
    return TransferMatrices(
        translation=-mean,
        rotation=vecs.T,
        scaling=np.diag(1.0 / np.sqrt(vals)),
    )


def xiao_transfer(target: ImageRGB, target_mask: MaskImage,
                  reference: ImageRGB, reference_mask: MaskImage) -> ImageRGB:
    """Full 3x3 covariance matching in RGB: whiten the target cloud, then run
    the reference chain backwards to take on its covariance and mean."""
    fg_t, fg_r = _gather(target, target_mask, reference, reference_mask)
    chain_t = whitening_matrices(fg_t.mean(axis=0), np.cov(fg_t.T, bias=True).reshape(3, 3))
    chain_r = whitening_matrices(fg_r.mean(axis=0), np.cov(fg_r.T, bias=True).reshape(3, 3))
    out = chain_r.color(chain_t.whiten(fg_t))
    return _rebuild(target, target_mask, out)


def _hist_match_1ch(t: np.ndarray, r: np.ndarray, lo: float, hi: float,
                    bins: int = _HIST_BINS) -> np.ndarray:
    """Cumulative-histogram matching on one channel over [lo, hi].

    Builds both histograms on a shared grid and maps each occupied target
    level to the occupied reference level whose cumulative count is nearest
    (ties take the lower level). Cumulative positions use the bin midpoint
    (count below plus half the bin's own count) so a distribution matched
    against itself yields the identity table. The value written for a
    reference level is the mean of the reference samples in that bin, which
    reproduces discrete palettes exactly.
    """
    if hi <= lo:
        return np.full_like(t, r.mean())
    edges = np.linspace(lo, hi, bins + 1)
    idx_t = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, bins - 1)
    idx_r = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, bins - 1)
    hist_t = np.bincount(idx_t, minlength=bins).astype(np.float64)
    hist_r = np.bincount(idx_r, minlength=bins).astype(np.float64)
    cum_t = (np.cumsum(hist_t) - hist_t / 2.0) / t.size
    filled = hist_r > 0
    cum_r = ((np.cumsum(hist_r) - hist_r / 2.0) / r.size)[filled]
    rep = (np.bincount(idx_r, weights=r, minlength=bins)[filled]
           / hist_r[filled])
    # nearest cumulative position; ties resolve to the lower level
    pos = np.clip(np.searchsorted(cum_r, cum_t, side="left"), 0, cum_r.size - 1)
    prev = np.clip(pos - 1, 0, cum_r.size - 1)
    take_prev = np.abs(cum_r[prev] - cum_t) <= np.abs(cum_r[pos] - cum_t)
    level = np.where(take_prev & (prev < pos), prev, pos)
    return rep[level[idx_t]]


def fecker_transfer(target: ImageRGB, target_mask: MaskImage,
                    reference: ImageRGB, reference_mask: MaskImage) -> ImageRGB:
    """Cumulative-histogram matching per channel in YCbCr."""
    fg_t, fg_r = _gather(target, target_mask, reference, reference_mask)
    ycc_t = rgb_to_ycbcr_pixels(fg_t)
    ycc_r = rgb_to_ycbcr_pixels(fg_r)
    out = np.empty_like(ycc_t)
    for c in range(3):
        lo = min(ycc_t[:, c].min(), ycc_r[:, c].min())
        hi = max(ycc_t[:, c].max(), ycc_r[:, c].max())
        out[:, c] = _hist_match_1ch(ycc_t[:, c], ycc_r[:, c], lo, hi)
    return _rebuild(target, target_mask, ycbcr_to_rgb_pixels(out))


def match_1d(vals_t: np.ndarray, vals_r: np.ndarray, bins: int = _HIST_BINS) -> np.ndarray:
    """1D distribution matching used by the iterative projection method."""
    lo = min(vals_t.min(), vals_r.min())
    hi = max(vals_t.max(), vals_r.max())
    return _hist_match_1ch(vals_t, vals_r, lo, hi, bins)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random orthonormal basis via QR with positive diagonal."""
    m = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(m)
    return q * np.sign(np.diag(r))


def pitie_transfer(target: ImageRGB, target_mask: MaskImage,
                   reference: ImageRGB, reference_mask: MaskImage,
                   iterations: int = _IDT_ITERATIONS, seed: int = 0,
                   rotations: list[np.ndarray] | None = None) -> ImageRGB:
    """Iterative distribution transfer: repeatedly rotate both clouds by a
    random orthonormal basis and histogram-match each projected axis.

    Values may drift outside [0,1] between iterations; they are clamped once
    at the very end.
    """
    fg_t, fg_r = _gather(target, target_mask, reference, reference_mask)
    rng = np.random.default_rng(seed)
    cur = fg_t.astype(np.float64).copy()
    ref = fg_r.astype(np.float64)
    for i in range(iterations):
        rot = rotations[i] if rotations is not None else _random_rotation(rng)
        proj_c = cur @ rot
        proj_r = ref @ rot
        matched = np.stack(
            [match_1d(proj_c[:, a], proj_r[:, a]) for a in range(3)], axis=1
        )
        cur = matched @ rot.T
    return _rebuild(target, target_mask, cur)


METHODS = {
    REINHARD_LAB: reinhard_transfer,
    XIAO_RGB: xiao_transfer,
    FECKER_HIST: fecker_transfer,
    PITIE_IDT: pitie_transfer,
}


def random_transfer(target: ImageRGB, target_mask: MaskImage,
                    reference: ImageRGB, reference_mask: MaskImage,
                    rng: np.random.Generator) -> TransferOutcome:
    """Pick one registered method uniformly at random and apply it."""
    tag = METHOD_TAGS[int(rng.integers(len(METHOD_TAGS)))]
    return apply_transfer(tag, target, target_mask, reference, reference_mask,
                          seed=int(rng.integers(2**31)))


def apply_transfer(method: str, target: ImageRGB, target_mask: MaskImage,
                   reference: ImageRGB, reference_mask: MaskImage,
                   seed: int = 0) -> TransferOutcome:
    """Apply a registered method and report the clamped-pixel fraction.

    The clamp fraction counts foreground pixels that sit on the gamut
    boundary in the output but did not in the untouched target: those are the
    pixels the final [0,1] clamp actually moved.
    """
    if method not in METHODS:
        raise KeyError(f"unknown transfer method {method!r}")
    if method == PITIE_IDT:
        out = pitie_transfer(target, target_mask, reference, reference_mask,
                             seed=seed)
    else:
        out = METHODS[method](target, target_mask, reference, reference_mask)
    fg_out = out.data[target_mask.data]
    fg_in = target.data[target_mask.data]
    at_edge = ((fg_out <= 0.0) | (fg_out >= 1.0)).any(axis=1)
    was_edge = ((fg_in <= 0.0) | (fg_in >= 1.0)).any(axis=1)
    newly = np.logical_and(at_edge, ~was_edge)
    frac = float(newly.sum()) / fg_out.shape[0]
    return TransferOutcome(image=out, method=method, clamp_fraction=frac,
                           seed=seed)
