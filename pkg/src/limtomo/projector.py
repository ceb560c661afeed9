"""Discrete parallel-beam Radon transform, its exact adjoint, and FBP.

The forward operator is ray-driven: each detector bin is covered by two
sub-rays (quarter-bin offsets, modelling the finite bin width); along each
sub-ray the image is sampled with a Catmull-Rom bicubic kernel at a fixed
step (default one pixel, midpoint rule on the chord through the unit disk)
and the samples are summed.  The cubic kernel has zero second moment, so
projections of sharp objects track their analytic line integrals far better
near edges than bilinear interpolation does, at similar cost.  The
backprojector applies the literal matrix transpose of that discretization —
identical sample positions and weights, scattered instead of gathered — so
<Pu, f> == <u, P^T f> holds to float64 roundoff.  Angles are processed in
parallel with per-angle partial results reduced in a fixed order, making
output independent of the thread count.

The operator acts on images supported on the unit reconstruction disk:
pixels whose centers lie outside it belong to the null space (they are
masked on input, and the adjoint returns zero there).  This keeps the
spectrum free of the near-null modes that barely-grazed corner pixels
would otherwise contribute.

Lengths are normalized so the reconstruction disk is the unit disk: pixel
size 2/N, projection values carry unit-disk length units.  This keeps the
stacked data operator of the solvers balanced (restriction rows and
projection rows of commensurate norm), which the Bregman enforcement rate
depends on.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit, prange

from .grids import GridMismatchError, Image, Sinogram, SinogramGrid, TruncationMask


@lru_cache(maxsize=8)
def _disk_mask(n):
    c = (np.arange(n) + 0.5) * (2.0 / n) - 1.0
    rr = c[None, :] ** 2 + c[:, None] ** 2
    mask = rr <= 1.0
    mask.setflags(write=False)
    return mask


@dataclass(frozen=True, eq=False)
class ProjectorGeometry:
    """Pairing of an image lattice with a sinogram lattice.

    sampling_step is the ray-integration step in pixel units;
    detector_supersample is the number of sub-rays per detector bin.
    """

    image_shape: tuple
    sino_grid: SinogramGrid
    sampling_step: float = 1.0
    detector_supersample: int = 2

    def __post_init__(self):
        ny, nx = self.image_shape
        if ny != nx:
            raise ValueError("image must be square")
        if self.sampling_step <= 0:
            raise ValueError("sampling_step must be > 0")
        if self.detector_supersample < 1:
            raise ValueError("detector_supersample must be >= 1")

    @property
    def n(self):
        return self.image_shape[0]

    @property
    def pixel_size(self):
        return 2.0 / self.n

    @property
    def step_length(self):
        """Ray step in unit-disk length units (t-grid spacing)."""
        return self.sampling_step * self.pixel_size

    def t_samples(self):
        h = self.step_length
        nt = int(round(2.0 / h))
        return -1.0 + (np.arange(nt) + 0.5) * h

    def subray_offsets(self):
        nos = self.detector_supersample
        ds = self.sino_grid.bin_spacing
        return ((np.arange(nos) + 0.5) / nos - 0.5) * ds


@njit(inline="always")
def _cubic_weights(fr):
    w0 = ((-0.5 * fr + 1.0) * fr - 0.5) * fr
    w1 = (1.5 * fr - 2.5) * fr * fr + 1.0
    w2 = ((-1.5 * fr + 2.0) * fr + 0.5) * fr
    w3 = (0.5 * fr - 0.5) * fr * fr
    return w0, w1, w2, w3


@njit(inline="always")
def _t_index_range(so, h, nt, px):
    """Sample indices whose cubic footprint can reach the unit disk."""
    reach = 1.0 + 3.0 * px
    rad2 = reach * reach - so * so
    if rad2 <= 0.0:
        return 0, 0
    tmax = np.sqrt(rad2)
    m_lo = int(np.ceil((1.0 - tmax) / h - 0.5))
    m_hi = int(np.floor((1.0 + tmax) / h - 0.5))
    if m_lo < 0:
        m_lo = 0
    if m_hi > nt - 1:
        m_hi = nt - 1
    return m_lo, m_hi + 1


@njit(parallel=True, cache=True, fastmath=True)
def _forward_kernel(u, cos_a, sin_a, s, t, off, h, px, n):
    na, nb, nt, nos = cos_a.shape[0], s.shape[0], t.shape[0], off.shape[0]
    out = np.zeros((na, nb))
    for j in prange(na):
        c = cos_a[j]
        si = sin_a[j]
        for k in range(nb):
            acc = 0.0
            for o in range(nos):
                so = s[k] + off[o]
                m_lo, m_hi = _t_index_range(so, h, nt, px)
                for m in range(m_lo, m_hi):
                    x = so * c - t[m] * si
                    y = so * si + t[m] * c
                    gx = (x + 1.0) / px - 0.5
                    gy = (y + 1.0) / px - 0.5
                    ix = int(np.floor(gx))
                    iy = int(np.floor(gy))
                    wx0, wx1, wx2, wx3 = _cubic_weights(gx - ix)
                    wy0, wy1, wy2, wy3 = _cubic_weights(gy - iy)
                    if 1 <= ix and ix + 2 < n and 1 <= iy and iy + 2 < n:
                        acc += (
                            wy0 * (wx0 * u[iy - 1, ix - 1] + wx1 * u[iy - 1, ix]
                                   + wx2 * u[iy - 1, ix + 1] + wx3 * u[iy - 1, ix + 2])
                            + wy1 * (wx0 * u[iy, ix - 1] + wx1 * u[iy, ix]
                                     + wx2 * u[iy, ix + 1] + wx3 * u[iy, ix + 2])
                            + wy2 * (wx0 * u[iy + 1, ix - 1] + wx1 * u[iy + 1, ix]
                                     + wx2 * u[iy + 1, ix + 1] + wx3 * u[iy + 1, ix + 2])
                            + wy3 * (wx0 * u[iy + 2, ix - 1] + wx1 * u[iy + 2, ix]
                                     + wx2 * u[iy + 2, ix + 1] + wx3 * u[iy + 2, ix + 2]))
                    elif -2 <= ix <= n and -2 <= iy <= n:
                        for dy in range(4):
                            jy = iy - 1 + dy
                            if jy < 0 or jy >= n:
                                continue
                            wy = wy0 if dy == 0 else (
                                wy1 if dy == 1 else (wy2 if dy == 2 else wy3))
                            row = 0.0
                            for dx in range(4):
                                jx = ix - 1 + dx
                                if jx < 0 or jx >= n:
                                    continue
                                wx = wx0 if dx == 0 else (
                                    wx1 if dx == 1 else (wx2 if dx == 2 else wx3))
                                row += wx * u[jy, jx]
                            acc += wy * row
            out[j, k] = h * acc / nos
    return out


@njit(parallel=True, cache=True, fastmath=True)
def _adjoint_kernel(f, cos_a, sin_a, s, t, off, h, px, n):
    na, nb, nt, nos = cos_a.shape[0], s.shape[0], t.shape[0], off.shape[0]
    part = np.zeros((na, n, n))
    for j in prange(na):
        c = cos_a[j]
        si = sin_a[j]
        for k in range(nb):
            g = h * f[j, k] / nos
            if g == 0.0:
                continue
            for o in range(nos):
                so = s[k] + off[o]
                m_lo, m_hi = _t_index_range(so, h, nt, px)
                for m in range(m_lo, m_hi):
                    x = so * c - t[m] * si
                    y = so * si + t[m] * c
                    gx = (x + 1.0) / px - 0.5
                    gy = (y + 1.0) / px - 0.5
                    ix = int(np.floor(gx))
                    iy = int(np.floor(gy))
                    wx0, wx1, wx2, wx3 = _cubic_weights(gx - ix)
                    wy0, wy1, wy2, wy3 = _cubic_weights(gy - iy)
                    if 1 <= ix and ix + 2 < n and 1 <= iy and iy + 2 < n:
                        part[j, iy - 1, ix - 1] += wy0 * wx0 * g
                        part[j, iy - 1, ix] += wy0 * wx1 * g
                        part[j, iy - 1, ix + 1] += wy0 * wx2 * g
                        part[j, iy - 1, ix + 2] += wy0 * wx3 * g
                        part[j, iy, ix - 1] += wy1 * wx0 * g
                        part[j, iy, ix] += wy1 * wx1 * g
                        part[j, iy, ix + 1] += wy1 * wx2 * g
                        part[j, iy, ix + 2] += wy1 * wx3 * g
                        part[j, iy + 1, ix - 1] += wy2 * wx0 * g
                        part[j, iy + 1, ix] += wy2 * wx1 * g
                        part[j, iy + 1, ix + 1] += wy2 * wx2 * g
                        part[j, iy + 1, ix + 2] += wy2 * wx3 * g
                        part[j, iy + 2, ix - 1] += wy3 * wx0 * g
                        part[j, iy + 2, ix] += wy3 * wx1 * g
                        part[j, iy + 2, ix + 1] += wy3 * wx2 * g
                        part[j, iy + 2, ix + 2] += wy3 * wx3 * g
                    elif -2 <= ix <= n and -2 <= iy <= n:
                        for dy in range(4):
                            jy = iy - 1 + dy
                            if jy < 0 or jy >= n:
                                continue
                            wy = wy0 if dy == 0 else (
                                wy1 if dy == 1 else (wy2 if dy == 2 else wy3))
                            for dx in range(4):
                                jx = ix - 1 + dx
                                if jx < 0 or jx >= n:
                                    continue
                                wx = wx0 if dx == 0 else (
                                    wx1 if dx == 1 else (wx2 if dx == 2 else wx3))
                                part[j, jy, jx] += wy * wx * g
    out = np.zeros((n, n))
    for j in range(na):
        out += part[j]
    return out


def _geom_arrays(g: ProjectorGeometry):
    ang = g.sino_grid.angles
    return (np.cos(ang), np.sin(ang), g.sino_grid.bin_centers, g.t_samples(),
            g.subray_offsets(), g.step_length, g.pixel_size, g.n)


def forward_array(arr, g: ProjectorGeometry):
    """radon_forward on a raw array, without container validation."""
    arr = np.ascontiguousarray(np.where(_disk_mask(g.n), arr, 0.0))
    return _forward_kernel(arr, *_geom_arrays(g))


def adjoint_array(arr, g: ProjectorGeometry):
    """radon_adjoint on a raw array, without container validation."""
    out = _adjoint_kernel(np.ascontiguousarray(arr, dtype=np.float64),
                          *_geom_arrays(g))
    return np.where(_disk_mask(g.n), out, 0.0)


def radon_forward(u, g: ProjectorGeometry) -> Sinogram:
    """Project an image (restricted to the reconstruction disk); linear in u."""
    arr = np.asarray(getattr(u, "data", u), dtype=np.float64)
    if arr.shape != tuple(g.image_shape):
        raise GridMismatchError(
            f"image shape {arr.shape} != geometry {tuple(g.image_shape)}")
    return Sinogram(g.sino_grid, forward_array(arr, g))


def radon_adjoint(f, g: ProjectorGeometry) -> Image:
    """Backproject a sinogram; exact matrix transpose of radon_forward."""
    arr = np.asarray(getattr(f, "data", f), dtype=np.float64)
    if arr.shape != g.sino_grid.shape:
        raise GridMismatchError(
            f"sinogram shape {arr.shape} != grid {g.sino_grid.shape}")
    return Image(adjoint_array(arr, g), g.pixel_size)


def _ramp_response(n_pad, spacing, window):
    """Frequency response of the band-limited ramp on a circular grid.

    Built from the classical spatial-domain kernel (1/(4*ds^2) at lag 0,
    -1/(pi*n*ds)^2 at odd lags), optionally Hann-windowed.
    """
    kern = np.zeros(n_pad)
    kern[0] = 1.0 / (4.0 * spacing ** 2)
    odd = np.arange(1, n_pad // 2 + 1, 2)
    val = -1.0 / (np.pi * odd * spacing) ** 2
    kern[odd] = val
    kern[-odd] = val
    resp = np.maximum(np.fft.rfft(kern).real, 0.0)
    if window == "hann":
        k = np.arange(resp.size)
        resp = resp * (0.5 * (1.0 + np.cos(np.pi * k / (n_pad // 2))))
    elif window != "ramp":
        raise ValueError(f"unknown filter {window!r} (use 'ramp' or 'hann')")
    return resp


def filter_sinogram(f, g: ProjectorGeometry, filter_name="hann"):
    """Per-angle ramp filtering in the detector variable; returns an array."""
    arr = np.asarray(getattr(f, "data", f), dtype=np.float64)
    nb = g.sino_grid.n_bins
    ds = g.sino_grid.bin_spacing
    n_pad = 1 << int(np.ceil(np.log2(2 * nb)))
    resp = _ramp_response(n_pad, ds, filter_name)
    spec = np.fft.rfft(arr, n=n_pad, axis=1) * resp
    return np.fft.irfft(spec, n=n_pad, axis=1)[:, :nb] * ds


def fbp_reconstruct(f, g: ProjectorGeometry, filter_name="hann") -> Image:
    """Filtered backprojection; accepts zero-filled truncated data.

    Output is unclamped: limited data produces the characteristic bright
    rim at the truncation boundary.
    """
    arr = np.asarray(getattr(f, "data", f), dtype=np.float64)
    if arr.shape != g.sino_grid.shape:
        raise GridMismatchError(
            f"sinogram shape {arr.shape} != grid {g.sino_grid.shape}")
    filtered = filter_sinogram(arr, g, filter_name)
    back = radon_adjoint(filtered, g)
    ds = g.sino_grid.bin_spacing
    scale = (np.pi / g.sino_grid.n_angles) * ds / g.pixel_size ** 2
    return Image(back.data * scale, g.pixel_size)


def operator_norm_sq(g: ProjectorGeometry, mask: TruncationMask, iters: int = 30,
                     forward=None, adjoint=None) -> float:
    """Power-iteration estimate of the squared norm of the stacked constraint
    operator [[R, 0], [0, R P], [R^c, -R^c P]] acting on (sinogram, image).

    The returned Rayleigh quotient is nondecreasing in iters and approaches
    the true norm from below.  forward/adjoint default to the Radon pair of
    the geometry; injectable so degenerate operators can be probed in tests.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if forward is None:
        forward = lambda u: radon_forward(u, g).data
    if adjoint is None:
        adjoint = lambda f: radon_adjoint(f, g).data
    kept = mask.kept
    rng = np.random.default_rng(1905)
    fvec = rng.standard_normal(g.sino_grid.shape)
    uvec = rng.standard_normal(tuple(g.image_shape))
    nrm = np.sqrt(np.sum(fvec ** 2) + np.sum(uvec ** 2))
    fvec /= nrm
    uvec /= nrm
    rq = 0.0
    for _ in range(iters):
        pu = forward(uvec)
        w = np.where(kept, 0.0, fvec - pu)
        ff = np.where(kept, fvec, 0.0) + w
        uu = adjoint(np.where(kept, pu, 0.0) - w)
        rq = float(np.vdot(fvec, ff) + np.vdot(uvec, uu))
        nrm = np.sqrt(np.sum(ff ** 2) + np.sum(uu ** 2))
        if nrm == 0.0:
            return 0.0
        fvec = ff / nrm
        uvec = uu / nrm
    return rq
