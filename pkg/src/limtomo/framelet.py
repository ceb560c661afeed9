"""Tight wavelet-frame transforms: analysis/synthesis, isotropic norm, thresholds.

Two families of filter banks share one coefficient layout:

* tensor-product B-spline banks (separable 1-D factors, odd taps, multi-level
  undecimated decomposition with zero-upsampled kernels at deeper levels);
* free-form square banks (e.g. learned 8x8 kernels, single level), applied
  through a patch-matrix product.

All convolutions are circular, which makes the synthesis operator the exact
matrix adjoint of the analysis operator and gives perfect reconstruction
W^T W = I to machine precision for any bank satisfying the unitary extension
principle.  Coefficients are stored as a dense stack of shape
(levels, bands, H, W); band 0 of the deepest level holds the low-pass plane,
band-0 slots of shallower levels are structurally zero so the stack stays
rectangular without breaking tightness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

_SQRT2 = np.sqrt(2.0)
_SQRT6 = np.sqrt(6.0)

LINEAR_BSPLINE_1D = (
    np.array([1.0, 2.0, 1.0]) / 4.0,
    np.array([1.0, 0.0, -1.0]) * (_SQRT2 / 4.0),
    np.array([-1.0, 2.0, -1.0]) / 4.0,
)

CUBIC_BSPLINE_1D = (
    np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0,
    np.array([-1.0, -2.0, 0.0, 2.0, 1.0]) / 8.0,
    np.array([-1.0, 0.0, 2.0, 0.0, -1.0]) * (_SQRT6 / 16.0),
    np.array([-1.0, 2.0, 0.0, -2.0, 1.0]) / 8.0,
    np.array([1.0, -4.0, 6.0, -4.0, 1.0]) / 16.0,
)


def _filter_autocorr_sum(kernels):
    """Sum over the bank of the full 2-D autocorrelation of each kernel."""
    ky = max(k.shape[0] for k in kernels)
    kx = max(k.shape[1] for k in kernels)
    out = np.zeros((2 * ky - 1, 2 * kx - 1))
    for k in kernels:
        pad = np.zeros((ky, kx))
        pad[: k.shape[0], : k.shape[1]] = k
        f = np.fft.rfft2(pad, s=out.shape)
        out += np.fft.irfft2(f * np.conj(f), s=out.shape)
    return out


@dataclass(eq=False)
class FilterBank:
    """A finite set of 2-D kernels; kernel 0 is the designated low-pass.

    kind is one of {"linear-bspline", "cubic-bspline", "learned"}.  B-spline
    banks additionally carry their 1-D factor filters, which enables the fast
    separable transform path.
    """

    kernels: list
    kind: str
    factors_1d: tuple = field(default=None, repr=False)

    def __post_init__(self):
        self.kernels = [np.asarray(k, dtype=np.float64) for k in self.kernels]

    @property
    def n_kernels(self):
        return len(self.kernels)

    @property
    def separable(self):
        return self.factors_1d is not None

    def uep_defect(self):
        """Max deviation of the summed kernel autocorrelation from a delta.

        Zero (to roundoff) exactly when the undecimated circular transform
        built from this bank satisfies W^T W = I on every grid that fits the
        kernels.
        """
        ac = _filter_autocorr_sum(self.kernels)
        target = np.zeros_like(ac)
        target[0, 0] = 1.0  # zero-lag term lives at index (0, 0) of irfft2
        return float(np.abs(ac - target).max())

    @classmethod
    def linear_bspline(cls):
        return cls(_tensor_kernels(LINEAR_BSPLINE_1D), "linear-bspline",
                   factors_1d=LINEAR_BSPLINE_1D)

    @classmethod
    def cubic_bspline(cls):
        return cls(_tensor_kernels(CUBIC_BSPLINE_1D), "cubic-bspline",
                   factors_1d=CUBIC_BSPLINE_1D)


def _tensor_kernels(factors):
    return [np.outer(a, b) for a in factors for b in factors]


@dataclass(frozen=True, eq=False)
class FrameletSystem:
    """A filter bank plus a decomposition depth."""

    bank: FilterBank
    levels: int = 1

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.levels > 1 and not self.bank.separable:
            raise ValueError("multi-level decomposition needs a separable bank")

    @property
    def n_bands(self):
        return self.bank.n_kernels


@dataclass(eq=False)
class FrameletCoeffs:
    """Dense coefficient stack, shape (levels, bands, H, W).

    bands[l, 0] is zero for l < levels-1; bands[levels-1, 0] is the low-pass.
    """

    bands: np.ndarray

    def __post_init__(self):
        self.bands = np.asarray(self.bands, dtype=np.float64)
        if self.bands.ndim != 4:
            raise ValueError("coefficient stack must be 4-D (levels, bands, H, W)")

    @property
    def levels(self):
        return self.bands.shape[0]

    @property
    def n_bands(self):
        return self.bands.shape[1]

    @property
    def grid_shape(self):
        return self.bands.shape[2:]

    def copy(self):
        return FrameletCoeffs(self.bands.copy())


def _raw2d(x):
    arr = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array, Image, or Sinogram")
    return arr


def _upsample(filt, dilation):
    if dilation == 1:
        return filt
    out = np.zeros((filt.size - 1) * dilation + 1)
    out[::dilation] = filt
    return out


def _corr_sep(x, fy, fx):
    return correlate1d(correlate1d(x, fy, axis=0, mode="wrap"),
                       fx, axis=1, mode="wrap")


def _patch_matrix(x, p):
    """All p-by-p patches of x with periodic wrap, flattened to (H*W, p*p)."""
    padded = np.pad(x, ((0, p - 1), (0, p - 1)), mode="wrap")
    win = np.lib.stride_tricks.sliding_window_view(padded, (p, p))
    return win.reshape(x.shape[0] * x.shape[1], p * p)


def _bank_matrix(bank):
    p = bank.kernels[0].shape[0]
    return np.stack([k.reshape(p * p) for k in bank.kernels])  # (m, p*p)


def decompose(x, sys: FrameletSystem) -> FrameletCoeffs:
    """Undecimated multi-level analysis of an image or sinogram array."""
    arr = _raw2d(x)
    bank = sys.bank
    if bank.separable:
        r1 = len(bank.factors_1d)
        kmax = max(f.size for f in bank.factors_1d)
        need = (kmax - 1) * (1 << (sys.levels - 1)) + 1
        if min(arr.shape) < need:
            raise ValueError(
                f"input shape {arr.shape} smaller than level-{sys.levels - 1} "
                f"kernel support {need}")
        out = np.zeros((sys.levels, r1 * r1) + arr.shape)
        low = arr
        for lev in range(sys.levels):
            filts = [_upsample(f, 1 << lev) for f in bank.factors_1d]
            rows = [correlate1d(low, f, axis=0, mode="wrap") for f in filts]
            for i1 in range(r1):
                for i2 in range(r1):
                    if i1 == 0 and i2 == 0:
                        continue
                    out[lev, i1 * r1 + i2] = correlate1d(
                        rows[i1], filts[i2], axis=1, mode="wrap")
            low = correlate1d(rows[0], filts[0], axis=1, mode="wrap")
        out[sys.levels - 1, 0] = low
        return FrameletCoeffs(out)
    # free-form bank: single level via a patch-matrix product
    p = bank.kernels[0].shape[0]
    if min(arr.shape) < p:
        raise ValueError(f"input shape {arr.shape} smaller than kernel support {p}")
    coeffs = _patch_matrix(arr, p) @ _bank_matrix(bank).T  # (H*W, m)
    stack = coeffs.T.reshape(1, bank.n_kernels, *arr.shape)
    return FrameletCoeffs(stack)


def reconstruct(c: FrameletCoeffs, sys: FrameletSystem) -> np.ndarray:
    """Synthesis operator: the exact adjoint of decompose.

    For coefficients produced by decompose this is a perfect inverse.
    """
    bank = sys.bank
    if c.levels != sys.levels or c.n_bands != sys.n_bands:
        raise ValueError(
            f"coefficient stack {c.bands.shape[:2]} does not match system "
            f"({sys.levels} levels, {sys.n_bands} bands)")
    if bank.separable:
        r1 = len(bank.factors_1d)
        acc = c.bands[sys.levels - 1, 0]
        for lev in range(sys.levels - 1, -1, -1):
            filts = [_upsample(f, 1 << lev)[::-1] for f in bank.factors_1d]
            g = _corr_sep(acc, filts[0], filts[0])
            for i1 in range(r1):
                for i2 in range(r1):
                    if i1 == 0 and i2 == 0:
                        continue
                    g = g + _corr_sep(c.bands[lev, i1 * r1 + i2],
                                      filts[i1], filts[i2])
            acc = g
        return acc
    p = bank.kernels[0].shape[0]
    h, w = c.grid_shape
    planes = c.bands[0].reshape(bank.n_kernels, h * w)
    grads = (planes.T @ _bank_matrix(bank)).reshape(h, w, p, p)
    out = np.zeros((h, w))
    for dy in range(p):
        for dx in range(p):
            out += np.roll(grads[:, :, dy, dx], shift=(dy, dx), axis=(0, 1))
    return out


def isotropic_l1(c: FrameletCoeffs) -> float:
    """Group-l1 norm: per pixel and level, l2 across high-pass bands."""
    if c.n_bands == 1:
        return 0.0
    r = np.sqrt(np.sum(c.bands[:, 1:] ** 2, axis=1))
    return float(r.sum())


def soft_threshold(c: FrameletCoeffs, alpha: float) -> FrameletCoeffs:
    """Isotropic shrinkage of the high-pass groups; low-pass passes through.

    Exact minimizer of alpha * ||d||_1 + 0.5 * ||d - c||_2^2 under the
    group-l1 norm above.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    out = c.bands.copy()
    if alpha == 0 or c.n_bands == 1:
        return FrameletCoeffs(out)
    hp = out[:, 1:]
    r = np.sqrt(np.sum(hp ** 2, axis=1, keepdims=True))
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r > 0, np.maximum(r - alpha, 0.0) / r, 0.0)
    out[:, 1:] = hp * scale
    return FrameletCoeffs(out)


def hard_threshold(c: FrameletCoeffs, lam: float) -> FrameletCoeffs:
    """Keep-or-kill on every band (no low-pass exemption): keep |v| >= lam."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    out = np.where(np.abs(c.bands) >= lam, c.bands, 0.0)
    return FrameletCoeffs(out)


# ---------------------------------------------------------------------------
# Plain-text kernel serialization, one kernel per block.
# ---------------------------------------------------------------------------

def save_bank(path, bank: FilterBank, header_lines=()):
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(f"kind {bank.kind}\n")
        fh.write(f"kernels {bank.n_kernels}\n")
        for k in bank.kernels:
            fh.write(f"{k.shape[0]} {k.shape[1]}\n")
            for row in k:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_bank(path) -> FilterBank:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    if not lines or not lines[0].startswith("kind "):
        raise ValueError(f"{path}: not a filter-bank dump")
    kind = lines[0].split(None, 1)[1]
    n = int(lines[1].split()[1])
    kernels = []
    pos = 2
    for _ in range(n):
        h, w = (int(t) for t in lines[pos].split())
        rows = [np.array([float(t) for t in lines[pos + 1 + i].split()])
                for i in range(h)]
        kernels.append(np.vstack(rows).reshape(h, w))
        pos += 1 + h
    factors = None
    if kind == "linear-bspline":
        factors = LINEAR_BSPLINE_1D
    elif kind == "cubic-bspline":
        factors = CUBIC_BSPLINE_1D
    return FilterBank(kernels, kind, factors_1d=factors)
