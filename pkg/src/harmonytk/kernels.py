"""Deterministic numpy reference kernels for the harmonization network pieces:
partial convolution, domain-representation extraction, verification score,
hinge/reconstruction/total losses, attention block, instance norm, spectral
normalization, and a finite-difference gradient harness.

Feature maps are plain float64 arrays in (channels, height, width) layout;
masks are (height, width) arrays of {0,1}. Everything is a pure function —
given identical inputs and seeds, outputs are bit-identical.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imgcore import ImageRGB, MaskImage

log = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2
DEFAULT_LAMBDA = 0.01
EXTRACTOR_CHANNELS = (8, 16, 32)
EXTRACTOR_KERNEL = 3
EXTRACTOR_STRIDE = 2


@dataclass(frozen=True)
class ConvWeights:
    """Convolution parameters: kernels (out, in, kh, kw) plus per-out bias."""

    kernels: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernels.ndim != 4:
            raise ValueError(f"kernels must be 4D, got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ValueError("bias length must equal output channel count")
        if not (np.all(np.isfinite(self.kernels)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite weights")


@dataclass(frozen=True)
class LossConfig:
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")


@dataclass(frozen=True)
class LossReport:
    l_rec: float
    l_dg: float
    l_gg: float
    l_dv: float
    l_gv: float
    l_g_total: float


@dataclass(frozen=True)
class DomainExtraction:
    """Foreground/background embedding pair; degenerate masks set the flag
    and leave the uncomputable side as None."""

    l_f: np.ndarray | None
    l_b: np.ndarray | None
    degenerate: bool


def check_feature_map(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or min(x.shape) <= 0:
        raise ValueError(f"feature map must be (C, H, W) with positive dims, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature map has non-finite entries")
    return x


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


# ---------------------------------------------------------------------------
# Partial convolution
# ---------------------------------------------------------------------------


def partial_conv(x: np.ndarray, mask: np.ndarray, w: ConvWeights,
                 stride: int = 1, padding: int = 0):
    """Mask-aware convolution.

    At each output site the kernel sees only entries where mask=1; the masked
    sum is rescaled by (window size)/(mask count in window) and the bias added.
    Sites whose window holds no mask pixels output exactly 0 with no bias.
    Returns (output (C_out, H', W'), updated (H', W') mask that is 1 where the
    window held any mask pixel).
    """
    x = check_feature_map(x)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.shape[1:]:
        raise ValueError(f"mask {mask.shape} vs input {x.shape[1:]}")
    out_ch, in_ch, kh, kw = w.kernels.shape
    if in_ch != x.shape[0]:
        raise ValueError(f"kernel expects {in_ch} channels, input has {x.shape[0]}")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
        mask = np.pad(mask, padding)
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ValueError("input smaller than kernel")

    masked = x * mask  # broadcast over channels
    win_x = sliding_window_view(masked, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    win_m = sliding_window_view(mask, (kh, kw))[::stride, ::stride]
    counts = win_m.sum(axis=(-1, -2))
    raw = np.einsum("chwyx,ocyx->ohw", win_x, w.kernels)
    valid = counts > 0
    scale = np.where(valid, (kh * kw) / np.maximum(counts, 1.0), 0.0)
    out = raw * scale[None, :, :] + np.where(valid, 1.0, 0.0) * w.bias[:, None, None]
    out *= valid[None, :, :]
    return out, valid.astype(np.float64)


def make_extractor(seed: int, in_channels: int = 3,
                   channels=EXTRACTOR_CHANNELS,
                   kernel: int = EXTRACTOR_KERNEL) -> list[ConvWeights]:
    """Small seeded partial-conv stack used for the domain-representation
    checks (3 layers, stride 2, LeakyReLU between layers)."""
    rng = np.random.default_rng(seed)
    layers = []
    prev = in_channels
    for ch in channels:
        fan_in = prev * kernel * kernel
        k = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (ch, prev, kernel, kernel))
        b = rng.normal(0.0, 0.05, ch)
        layers.append(ConvWeights(kernels=k, bias=b))
        prev = ch
    return layers


def _run_extractor(x: np.ndarray, mask: np.ndarray,
                   extractor: list[ConvWeights], strides) -> np.ndarray | None:
    cur, cur_mask = x, mask
    for i, w in enumerate(extractor):
        k = w.kernels.shape[2]
        cur, cur_mask = partial_conv(cur, cur_mask, w, stride=strides[i],
                                     padding=k // 2)
        cur = leaky_relu(cur)
    if cur_mask.sum() == 0:
        return None
    # masked global average pooling over surviving sites
    sel = cur_mask > 0
    return cur[:, sel].mean(axis=1)


def extract_domain_reps(img: ImageRGB, mask: MaskImage,
                        extractor: list[ConvWeights],
                        strides=None) -> DomainExtraction:
    """Embed the foreground and background regions separately.

    The same partial-conv stack runs twice: once on (image*mask, mask) and
    once on the complement. An all-foreground or all-background mask cannot
    produce both vectors; the result is flagged degenerate with the missing
    side left as None.
    """
    if strides is None:
        strides = [EXTRACTOR_STRIDE] * len(extractor)
    x = np.transpose(img.data, (2, 0, 1)).astype(np.float64)
    m_f = mask.data.astype(np.float64)
    m_b = 1.0 - m_f
    l_f = _run_extractor(x * m_f, m_f, extractor, strides) if m_f.any() else None
    l_b = _run_extractor(x * m_b, m_b, extractor, strides) if m_b.any() else None
    return DomainExtraction(l_f=l_f, l_b=l_b,
                            degenerate=(l_f is None or l_b is None))


def domain_similarity(l_f: np.ndarray, l_b: np.ndarray) -> float:
    l_f = np.asarray(l_f, dtype=np.float64)
    l_b = np.asarray(l_b, dtype=np.float64)
    if l_f.shape != l_b.shape or l_f.ndim != 1:
        raise ValueError(f"length mismatch {l_f.shape} vs {l_b.shape}")
    return float(l_f @ l_b)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def hinge_d_loss(real_scores, fake_scores) -> float:
    """mean(max(0, 1 - real)) + mean(max(0, 1 + fake))."""
    real = np.asarray(real_scores, dtype=np.float64)
    fake = np.asarray(fake_scores, dtype=np.float64)
    if real.size == 0 or fake.size == 0:
        raise ValueError("score lists must be non-empty")
    return float(np.maximum(0.0, 1.0 - real).mean()
                 + np.maximum(0.0, 1.0 + fake).mean())


def hinge_g_loss(fake_scores) -> float:
    """-mean(fake)."""
    fake = np.asarray(fake_scores, dtype=np.float64)
    if fake.size == 0:
        raise ValueError("score list must be non-empty")
    return float(-fake.mean())


def reconstruction_loss(pred: ImageRGB, target: ImageRGB) -> float:
    """Mean absolute difference over all entries (resolution-independent)."""
    if pred.data.shape != target.data.shape:
        raise ValueError("shape mismatch")
    return float(np.abs(pred.data - target.data).mean())


def generator_total_loss(l_rec: float, l_gg: float, l_gv: float,
                         cfg: LossConfig = LossConfig()) -> float:
    for v in (l_rec, l_gg, l_gv):
        if not np.isfinite(v):
            raise ValueError("non-finite loss input")
    return l_rec + cfg.lam * (l_gg + l_gv)


def loss_report(l_rec: float, l_dg: float, l_gg: float, l_dv: float,
                l_gv: float, cfg: LossConfig = LossConfig()) -> LossReport:
    return LossReport(
        l_rec=l_rec, l_dg=l_dg, l_gg=l_gg, l_dv=l_dv, l_gv=l_gv,
        l_g_total=generator_total_loss(l_rec, l_gg, l_gv, cfg),
    )


# ---------------------------------------------------------------------------
# Attention block, instance norm, spectral normalization
# ---------------------------------------------------------------------------


def _conv1x1(x: np.ndarray, w: ConvWeights) -> np.ndarray:
    out_ch, in_ch, kh, kw = w.kernels.shape
    if (kh, kw) != (1, 1):
        raise ValueError("attention weights must be 1x1")
    if in_ch != x.shape[0]:
        raise ValueError("channel mismatch in 1x1 conv")
    k = w.kernels[:, :, 0, 0]
    return np.einsum("oc,chw->ohw", k, x) + w.bias[:, None, None]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def attention_block(enc: np.ndarray, dec: np.ndarray,
                    w_enc: ConvWeights, w_dec: ConvWeights) -> np.ndarray:
    """Gate both feature stacks by sigmoid 1x1-conv attention over their
    concatenation, then concatenate the gated stacks."""
    enc = check_feature_map(enc)
    dec = check_feature_map(dec)
    if enc.shape[1:] != dec.shape[1:]:
        raise ValueError(f"spatial mismatch {enc.shape[1:]} vs {dec.shape[1:]}")
    both = np.concatenate([enc, dec], axis=0)
    att_enc = _sigmoid(_conv1x1(both, w_enc))
    att_dec = _sigmoid(_conv1x1(both, w_dec))
    if att_enc.shape[0] != enc.shape[0] or att_dec.shape[0] != dec.shape[0]:
        raise ValueError("attention output channels must match gated stacks")
    return np.concatenate([enc * att_enc, dec * att_dec], axis=0)


def instance_norm(x: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    """Normalize each channel to zero spatial mean / unit variance."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = check_feature_map(x)
    mean = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    return (x - mean) / np.sqrt(var + epsilon)


def spectral_normalize(w: np.ndarray, power_iters: int = 50,
                       seed: int = 0) -> np.ndarray:
    """Divide a matrix by its top singular value, estimated with seeded power
    iteration. A zero matrix cannot be normalized; it is returned unchanged
    (copy) with a logged warning."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("expected a 2D matrix")
    if power_iters < 1:
        raise ValueError("power_iters must be >= 1")
    if not w.any():
        log.warning("spectral_normalize: zero matrix left unchanged")
        return w.copy()
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(w.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(power_iters):
        u = w @ v
        nu = np.linalg.norm(u)
        if nu == 0:  # v landed in the null space; redraw
            v = rng.standard_normal(w.shape[1])
            v /= np.linalg.norm(v)
            continue
        u /= nu
        v = w.T @ u
        v /= np.linalg.norm(v)
    sigma = float(u @ w @ v)
    return w / sigma


# ---------------------------------------------------------------------------
# Finite-difference gradient harness
# ---------------------------------------------------------------------------


def finite_diff_grad(fn, x: np.ndarray, eps: float) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy(); hi.flat[i] += eps
        lo = x.copy(); lo.flat[i] -= eps
        fhi, flo = fn(hi), fn(lo)
        if not (np.isfinite(fhi) and np.isfinite(flo)):
            raise ValueError("non-finite loss at perturbed point")
        g.flat[i] = (fhi - flo) / (2.0 * eps)
    return g


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-12)
    return float((np.abs(analytic - numeric) / denom).max())


def grad_check(perturbation: float = 1e-5, seed: int = 0) -> dict[str, float]:
    """Compare analytic gradients of every differentiable loss op against
    central finite differences.

    Sample points sit away from hinge/absolute-value kinks (a coordinate is a
    kink when a score touches the ±1 margin or a pixel pair is equal); those
    points have only subgradients and are excluded by construction. Returns
    the max relative error per op.
    """
    if not 1e-6 <= perturbation <= 1e-3:
        raise ValueError("perturbation outside [1e-6, 1e-3]")
    rng = np.random.default_rng(seed)
    gap = 4.0 * perturbation
    report: dict[str, float] = {}

    # domain_similarity: d/da (a.b) = b, d/db = a
    a = rng.standard_normal(8)
    b = rng.standard_normal(8)
    num = finite_diff_grad(lambda v: domain_similarity(v, b), a, perturbation)
    report["domain_similarity_lf"] = _rel_err(b, num)
    num = finite_diff_grad(lambda v: domain_similarity(a, v), b, perturbation)
    report["domain_similarity_lb"] = _rel_err(a, num)

    # hinge_d_loss: active terms have slope -1/n (real) and +1/m (fake)
    def away_from(vals, kink):
        vals = vals.copy()
        near = np.abs(vals - kink) < gap
        vals[near] = kink + gap * np.sign(vals[near] - kink + 1e-9) * 2
        return vals

    real = away_from(rng.uniform(-2, 2, 6), 1.0)
    fake = away_from(rng.uniform(-2, 2, 6), -1.0)
    g_real = np.where(real < 1.0, -1.0 / real.size, 0.0)
    g_fake = np.where(fake > -1.0, 1.0 / fake.size, 0.0)
    num = finite_diff_grad(lambda v: hinge_d_loss(v, fake), real, perturbation)
    report["hinge_d_real"] = _rel_err(g_real, num)
    num = finite_diff_grad(lambda v: hinge_d_loss(real, v), fake, perturbation)
    report["hinge_d_fake"] = _rel_err(g_fake, num)

    # hinge_g_loss: constant slope -1/m
    fake = rng.uniform(-2, 2, 6)
    num = finite_diff_grad(hinge_g_loss, fake, perturbation)
    report["hinge_g"] = _rel_err(np.full(fake.size, -1.0 / fake.size), num)

    # reconstruction_loss: sign(pred - target)/N away from equality kinks
    target = rng.random((4, 4, 3))
    pred = target + away_from(rng.uniform(-0.3, 0.3, target.shape).ravel(), 0.0).reshape(target.shape)
    pred = np.clip(pred, -1, 2)  # keep ImageRGB finite-range friendly

    def rec_fn(flat):
        return reconstruction_loss(
            ImageRGB(flat.reshape(target.shape)), ImageRGB(target)
        )

    g_rec = np.sign(pred - target).ravel() / pred.size
    num = finite_diff_grad(rec_fn, pred.ravel(), perturbation)
    report["reconstruction"] = _rel_err(g_rec, num)

    # generator_total_loss: gradient (1, lambda, lambda)
    cfg = LossConfig()
    point = rng.standard_normal(3)
    num = finite_diff_grad(
        lambda v: generator_total_loss(v[0], v[1], v[2], cfg), point, perturbation
    )
    report["generator_total"] = _rel_err(np.array([1.0, cfg.lam, cfg.lam]), num)
    return report


# ---------------------------------------------------------------------------
# Weight file format: one ASCII header line "out in kh kw", then the kernel
# tensor and bias vector as little-endian float32.
# ---------------------------------------------------------------------------


def save_weights(w: ConvWeights, path) -> None:
    out_ch, in_ch, kh, kw = w.kernels.shape
    with open(path, "wb") as fh:
        fh.write(f"{out_ch} {in_ch} {kh} {kw}\n".encode("ascii"))
        fh.write(w.kernels.astype("<f4").tobytes())
        fh.write(w.bias.astype("<f4").tobytes())


def load_weights(path) -> ConvWeights:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 4:
            raise ValueError(f"bad weight header {header}")
        out_ch, in_ch, kh, kw = (int(v) for v in header)
        blob = fh.read()
    n_kernel = out_ch * in_ch * kh * kw
    expected = (n_kernel + out_ch) * 4
    if len(blob) != expected:
        raise ValueError(f"weight payload {len(blob)} bytes, expected {expected}")
    flat = np.frombuffer(blob, dtype="<f4")
    return ConvWeights(
        kernels=flat[:n_kernel].astype(np.float64).reshape(out_ch, in_ch, kh, kw),
        bias=flat[n_kernel:].astype(np.float64),
    )


# ---------------------------------------------------------------------------
# Self-check battery (backs the CLI `kernels-check` subcommand)
# ---------------------------------------------------------------------------


def kernels_check(seed: int = 0) -> dict:
    """Run the deterministic example checks for every kernel op and report
    pass/fail per check plus the gradient errors."""
    rng = np.random.default_rng(seed)
    results: dict[str, bool] = {}

    # partial conv: all-ones mask == plain convolution
    x = rng.random((2, 6, 6))
    w = ConvWeights(kernels=rng.standard_normal((3, 2, 3, 3)), bias=rng.standard_normal(3))
    ones = np.ones((6, 6))
    got, upd = partial_conv(x, ones, w)
    win = sliding_window_view(x, (3, 3), axis=(1, 2))
    plain = np.einsum("chwyx,ocyx->ohw", win, w.kernels) + w.bias[:, None, None]
    results["partial_conv_plain"] = bool(np.allclose(got, plain, atol=1e-12) and upd.all())

    # partial conv: hand-computed rescale on a half-covered window
    k1 = ConvWeights(kernels=np.ones((1, 1, 3, 3)), bias=np.zeros(1))
    xi = np.ones((1, 3, 3))
    mi = np.zeros((3, 3)); mi[0, :2] = 1; mi[1, :2] = 1
    got, _ = partial_conv(xi, mi, k1)
    results["partial_conv_rescale"] = bool(abs(got[0, 0, 0] - 9.0) < 1e-12)

    # no-leakage
    img = ImageRGB(rng.random((16, 16, 3)))
    mask = MaskImage(rng.random((16, 16)) > 0.5)
    ext = make_extractor(seed)
    base = extract_domain_reps(img, mask, ext)
    noisy = img.data.copy()
    noisy[~mask.data] = rng.random(((~mask.data).sum(), 3))
    pert = extract_domain_reps(ImageRGB(noisy), mask, ext)
    results["domain_rep_no_leakage"] = bool(np.array_equal(base.l_f, pert.l_f))

    # similarity arithmetic
    results["domain_similarity"] = (
        domain_similarity(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0
    )

    # loss examples
    results["hinge_d"] = (
        hinge_d_loss([1.0], [-1.0]) == 0.0
        and hinge_d_loss([0.0], [0.0]) == 2.0
        and hinge_d_loss([-1.0], [1.0]) == 4.0
    )
    results["hinge_g"] = hinge_g_loss([0.5]) == -0.5 and hinge_g_loss([1.0, -1.0]) == 0.0
    results["generator_total"] = (
        abs(generator_total_loss(1.0, -2.0, -3.0) - 0.95) < 1e-12
    )

    # attention: zero weights halve everything
    enc = rng.random((2, 4, 4)); dec = rng.random((3, 4, 4))
    wz_e = ConvWeights(kernels=np.zeros((2, 5, 1, 1)), bias=np.zeros(2))
    wz_d = ConvWeights(kernels=np.zeros((3, 5, 1, 1)), bias=np.zeros(3))
    att = attention_block(enc, dec, wz_e, wz_d)
    results["attention_zero_weights"] = bool(
        np.allclose(att, 0.5 * np.concatenate([enc, dec]), atol=1e-12)
    )

    # instance norm moments
    x = rng.random((3, 8, 8)) * 4 + 1
    y = instance_norm(x)
    results["instance_norm"] = bool(
        np.abs(y.mean(axis=(1, 2))).max() < 1e-6
        and np.all(y.var(axis=(1, 2)) > 1 - 1e-3) and np.all(y.var(axis=(1, 2)) <= 1.0)
    )

    # spectral normalization vs SVD oracle
    ok = True
    for i in range(20):
        m = rng.standard_normal((8, 8))
        sn = spectral_normalize(m, power_iters=50, seed=i)
        ok &= abs(np.linalg.svd(sn, compute_uv=False)[0] - 1.0) < 1e-3
    results["spectral_normalize"] = bool(ok)

    grads = grad_check(seed=seed)
    results["grad_check"] = max(grads.values()) < 1e-3
    return {"checks": results, "grad_errors": grads,
            "passed": all(results.values())}
