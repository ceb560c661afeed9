"""Bregmanized operator-splitting solvers.

Two entry points share the machinery:

* solve_joint — reconstructs the image and an extrapolated full-detector
  sinogram together, under one tight frame on each, subject to the three
  linear constraints (measured data on the kept bins for both the sinogram
  and the projected image, and sinogram/projection consistency on the
  complement), with nonnegativity on the sinogram and a box on the image.
* solve_baseline — the frame-analysis model on the image alone, subject to
  the kept-bin data constraint.

Every subproblem has a closed form: the gradient steps use the exact
projector adjoint, the proximal steps exploit W^T W = I (the quadratic is
then spherical, so clamping the unconstrained minimizer is exact), the
coefficient updates are isotropic soft-thresholding, and the Bregman
variables accumulate constraint residuals.  Optionally the two filter banks
are relearned from the current iterates on a fixed schedule, with the
frame-side variables re-zeroed in the new band space (the data-side Bregman
variables are bank-independent and carry across).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import ddtf as ddtf_mod
from .framelet import (FilterBank, FrameletCoeffs, FrameletSystem, decompose,
                       isotropic_l1, reconstruct, soft_threshold)
from .grids import Image, Sinogram, TruncationMask
from .projector import (ProjectorGeometry, adjoint_array, fbp_reconstruct,
                        forward_array, operator_norm_sq)


class DivergenceError(RuntimeError):
    """An iterate went non-finite; .step names the update that produced it."""

    def __init__(self, step, iteration):
        self.step = step
        self.iteration = iteration
        super().__init__(
            f"non-finite iterate after step {step} at iteration {iteration}")


@dataclass(eq=False)
class SolverParams:
    """Weights and controls for the BOS solvers.

    kappa=None resolves to 1.05x a power-iteration estimate of the stacked
    constraint operator's squared norm.  beta is the shared splitting
    weight; beta1/beta2 override it per side (sinogram / image), since the
    two frames act on variables of very different coefficient scales and
    the effective thresholds are lambda1/beta1 and lambda2/beta2.  lambda2
    doubles as the baseline model's regularization weight.  sigma > 0
    enables discrepancy stopping at ||R Pu - f0|| <= 1.05*sqrt(|kept|)*sigma.
    """

    lambda1: float = 100.0
    lambda2: float = 0.01
    kappa: float = None
    beta: float = 1.0
    beta1: float = None
    beta2: float = None
    a: float = 1.0
    max_iters: int = 2000
    tol: float = 1e-5
    sigma: float = 0.0
    ddtf: tuple = None  # (sinogram-side DdtfConfig, image-side DdtfConfig)
    relearn_every: int = 50
    norm_est_iters: int = 30

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda weights must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.beta1 is None:
            self.beta1 = self.beta
        if self.beta2 is None:
            self.beta2 = self.beta
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("splitting weights must be >= 0")
        if self.a <= 0:
            raise ValueError("a must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.kappa is not None and self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if self.ddtf is not None and len(self.ddtf) != 2:
            raise ValueError("ddtf must be a (sinogram-side, image-side) pair")


@dataclass(eq=False)
class SolverState:
    """All iterates of the joint BOS sweep."""

    f: Sinogram
    u: Image
    v1: Sinogram
    v2: Image
    f1: Sinogram
    f2: Sinogram
    f3: Sinogram
    d1: FrameletCoeffs
    b1: FrameletCoeffs
    d2: FrameletCoeffs
    b2: FrameletCoeffs
    iter: int = 0
    pu: Sinogram = field(default=None, repr=False)  # cached P u
    iso1: float = field(default=0.0, repr=False)
    iso2: float = field(default=0.0, repr=False)


def _zero_coeffs(sys: FrameletSystem, shape) -> FrameletCoeffs:
    return FrameletCoeffs(np.zeros((sys.levels, sys.n_bands) + tuple(shape)))


def init_state(f0: Sinogram, mask: TruncationMask, g: ProjectorGeometry,
               sys1: FrameletSystem, sys2: FrameletSystem, a: float = 1.0,
               filter_name="hann") -> SolverState:
    """Initial iterates: f = f0, u = clamped FBP, data Bregman vars = f0."""
    if f0.grid != mask.grid or f0.grid != g.sino_grid:
        raise ValueError("f0, mask, and geometry grids disagree")
    if np.any(f0.data[mask.complement] != 0.0):
        raise ValueError("measured data must be zero outside the kept region")
    u0 = np.clip(fbp_reconstruct(f0, g, filter_name).data, 0.0, a)
    zero_s = Sinogram.zeros(f0.grid)
    return SolverState(
        f=Sinogram(f0.grid, f0.data.copy()),
        u=Image(u0, g.pixel_size),
        v1=zero_s,
        v2=Image(np.zeros(g.image_shape), g.pixel_size),
        f1=Sinogram(f0.grid, f0.data.copy()),
        f2=Sinogram(f0.grid, f0.data.copy()),
        f3=zero_s,
        d1=_zero_coeffs(sys1, f0.grid.shape),
        b1=_zero_coeffs(sys1, f0.grid.shape),
        d2=_zero_coeffs(sys2, g.image_shape),
        b2=_zero_coeffs(sys2, g.image_shape),
        iter=0,
    )


_STEP_ORDER = (("v1", 1), ("v2", 2), ("f", 3), ("u", 4), ("d1", 5), ("d2", 6),
               ("f1", 7), ("f2", 8), ("f3", 9), ("b1", 10), ("b2", 11))


def _check_finite(arrays, iteration):
    for name, step in _STEP_ORDER:
        arr = arrays[name]
        if not np.isfinite(float(np.sum(np.abs(arr)))):
            raise DivergenceError(step, iteration)


def bos_step(state: SolverState, f0: Sinogram, params: SolverParams,
             mask: TruncationMask, g: ProjectorGeometry,
             sys1: FrameletSystem, sys2: FrameletSystem) -> SolverState:
    """One full sweep of the eleven-step joint iteration.

    params.kappa must be resolved to a number (solve_joint does this).
    Accepts zero splitting weights, in which case the corresponding
    proximal step reduces to a pure clamped gradient step and the
    coefficient update returns zero.
    """
    kappa = params.kappa
    if kappa is None:
        raise ValueError("bos_step needs a resolved params.kappa")
    beta1 = params.beta1
    beta2 = params.beta2
    kept = mask.kept
    f0d = f0.data
    f = state.f.data
    u = state.u.data
    f1 = state.f1.data
    f2 = state.f2.data
    f3 = state.f3.data
    pu = state.pu.data if state.pu is not None else forward_array(u, g)

    # (1) sinogram gradient step
    g1 = np.where(kept, f, 0.0) - f1
    g3 = np.where(kept, 0.0, f - pu) - f3
    v1 = f - (np.where(kept, g1, 0.0) + np.where(kept, 0.0, g3)) / kappa
    # (2) image gradient step through the projector adjoint
    arg = pu - np.where(kept, f2, 0.0) - np.where(kept, 0.0, f - f3)
    v2 = u - adjoint_array(arg, g) / kappa

    # (3)-(4) proximal steps; W^T W = I makes clamping the closed form exact
    if beta1 > 0.0:
        syn1 = reconstruct(FrameletCoeffs(state.d1.bands - state.b1.bands), sys1)
        f_new = np.maximum((kappa * v1 + beta1 * syn1) / (kappa + beta1), 0.0)
    else:
        f_new = np.maximum(v1, 0.0)
    if beta2 > 0.0:
        syn2 = reconstruct(FrameletCoeffs(state.d2.bands - state.b2.bands), sys2)
        u_new = np.clip((kappa * v2 + beta2 * syn2) / (kappa + beta2), 0.0, params.a)
    else:
        u_new = np.clip(v2, 0.0, params.a)

    # (5)-(6) isotropic shrinkage of the analysis coefficients
    w1f = decompose(f_new, sys1)
    w2u = decompose(u_new, sys2)
    if beta1 > 0.0:
        d1 = soft_threshold(FrameletCoeffs(w1f.bands + state.b1.bands),
                            params.lambda1 / beta1)
    else:
        d1 = FrameletCoeffs(np.zeros_like(w1f.bands))
    if beta2 > 0.0:
        d2 = soft_threshold(FrameletCoeffs(w2u.bands + state.b2.bands),
                            params.lambda2 / beta2)
    else:
        d2 = FrameletCoeffs(np.zeros_like(w2u.bands))

    # (7)-(9) data-side Bregman updates
    pu_new = forward_array(u_new, g)
    f1_new = f1 + f0d - np.where(kept, f_new, 0.0)
    f2_new = f2 + f0d - np.where(kept, pu_new, 0.0)
    f3_new = f3 + np.where(kept, 0.0, pu_new - f_new)

    # (10)-(11) frame-side Bregman updates
    b1 = FrameletCoeffs(state.b1.bands + w1f.bands - d1.bands)
    b2 = FrameletCoeffs(state.b2.bands + w2u.bands - d2.bands)

    it = state.iter + 1
    _check_finite({"v1": v1, "v2": v2, "f": f_new, "u": u_new,
                   "d1": d1.bands, "d2": d2.bands, "f1": f1_new, "f2": f2_new,
                   "f3": f3_new, "b1": b1.bands, "b2": b2.bands}, it)
    grid = f0.grid
    return SolverState(
        f=Sinogram(grid, f_new), u=Image(u_new, g.pixel_size),
        v1=Sinogram(grid, v1), v2=Image(v2, g.pixel_size),
        f1=Sinogram(grid, f1_new), f2=Sinogram(grid, f2_new),
        f3=Sinogram(grid, f3_new),
        d1=d1, b1=b1, d2=d2, b2=b2, iter=it,
        pu=Sinogram(grid, pu_new),
        iso1=isotropic_l1(w1f), iso2=isotropic_l1(w2u),
    )


@dataclass(eq=False)
class ConvergenceLog:
    """Per-iteration diagnostics; written as CSV.

    Columns: iter, res_data_f (||R f - f0||), res_data_u (||R Pu - f0||),
    res_consistency (||R^c (Pu - f)||), objective, rel_change,
    psnr_vs_reference (blank when no reference was supplied).
    """

    rows: list = field(default_factory=list)
    learned_banks: list = field(default_factory=list)
    stop_reason: str = ""

    COLUMNS = ("iter", "res_data_f", "res_data_u", "res_consistency",
               "objective", "rel_change", "psnr_vs_reference")

    def append(self, it, res_f, res_u, res_c, objective, rel_change, psnr_ref):
        self.rows.append((it, res_f, res_u, res_c, objective, rel_change, psnr_ref))

    @property
    def n_iters(self):
        return len(self.rows)

    def summed_residuals(self):
        return [r[1] + r[2] + r[3] for r in self.rows]

    def monotonicity_violations(self, window=50):
        """Iterations whose summed constraint residual exceeds the value one
        window earlier.  Flagging only; callers decide what to do."""
        s = self.summed_residuals()
        return [self.rows[k][0] for k in range(window, len(s))
                if s[k] > s[k - window]]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for row in self.rows:
                it, rf, ru, rc, obj, rel, ps = row
                ps_txt = "" if ps is None else f"{ps:.17g}"
                fh.write(f"{it},{rf:.17g},{ru:.17g},{rc:.17g},"
                         f"{obj:.17g},{rel:.17g},{ps_txt}\n")


def _resolve_kappa(params, g, mask):
    if params.kappa is not None:
        return params
    est = operator_norm_sq(g, mask, params.norm_est_iters)
    return replace(params, kappa=1.05 * est)


def _psnr_conv(u, ref):
    err = np.linalg.norm((u - ref).ravel())
    if err == 0.0:
        return 999.0
    return float(-20.0 * np.log10(err / np.sqrt(u.size)))


def _relearn(params, state, sys1, sys2, log):
    cfg1, cfg2 = params.ddtf
    bank1 = ddtf_mod.learn(state.f.data, cfg1)
    bank2 = ddtf_mod.learn(state.u.data, cfg2)
    sys1 = FrameletSystem(bank1, 1)
    sys2 = FrameletSystem(bank2, 1)
    for side, bank, cfg, source in (("sino", bank1, cfg1, state.f.data),
                                    ("image", bank2, cfg2, state.u.data)):
        lam = "auto-mad" if cfg.threshold is None else f"{cfg.threshold:g}"
        header = ddtf_mod.provenance_header(source, lam, cfg.n_alternations)
        log.learned_banks.append(
            {"iteration": state.iter, "side": side, "bank": bank,
             "header": header})
    state.d1 = _zero_coeffs(sys1, state.f.data.shape)
    state.b1 = _zero_coeffs(sys1, state.f.data.shape)
    state.d2 = _zero_coeffs(sys2, state.u.data.shape)
    state.b2 = _zero_coeffs(sys2, state.u.data.shape)
    return sys1, sys2


def solve_joint(f0: Sinogram, mask: TruncationMask, g: ProjectorGeometry,
                sys1: FrameletSystem, sys2: FrameletSystem,
                params: SolverParams, reference=None, progress=None):
    """Run the joint reconstruction to tolerance or iteration cap.

    Returns (image, extrapolated sinogram, log).  With params.ddtf set, the
    banks are relearned from the current iterates every relearn_every
    iterations (including from the initial iterates) and the sweep continues
    with the learned systems.
    """
    params = _resolve_kappa(params, g, mask)
    state = init_state(f0, mask, g, sys1, sys2, a=params.a)
    log = ConvergenceLog()
    ref = None if reference is None else np.asarray(getattr(reference, "data", reference))
    kept = mask.kept
    disc = 1.05 * np.sqrt(mask.n_kept) * params.sigma if params.sigma > 0 else 0.0
    log.stop_reason = "max_iters"
    for k in range(params.max_iters):
        if params.ddtf is not None and k % params.relearn_every == 0:
            sys1, sys2 = _relearn(params, state, sys1, sys2, log)
        u_prev = state.u.data
        state = bos_step(state, f0, params, mask, g, sys1, sys2)
        pu = state.pu.data
        res_f = float(np.linalg.norm(np.where(kept, state.f.data, 0.0) - f0.data))
        res_u = float(np.linalg.norm(np.where(kept, pu, 0.0) - f0.data))
        res_c = float(np.linalg.norm(np.where(kept, 0.0, pu - state.f.data)))
        objective = params.lambda1 * state.iso1 + params.lambda2 * state.iso2
        du = float(np.linalg.norm(state.u.data - u_prev))
        nu = float(np.linalg.norm(u_prev))
        rel = du / nu if nu > 0 else (0.0 if du == 0.0 else np.inf)
        ps = None if ref is None else _psnr_conv(state.u.data, ref)
        log.append(state.iter, res_f, res_u, res_c, objective, rel, ps)
        if progress is not None:
            progress(state, log)
        if rel < params.tol:
            log.stop_reason = "tolerance"
            break
        if disc > 0 and res_u <= disc:
            log.stop_reason = "discrepancy"
            break
    return state.u, state.f, log


def solve_baseline(f0: Sinogram, mask: TruncationMask, g: ProjectorGeometry,
                   sys: FrameletSystem, params: SolverParams, reference=None,
                   progress=None):
    """Frame-analysis reconstruction of the image alone (no extrapolation).

    The five-line Bregman loop: projected gradient step on the kept-bin data
    term, proximal step with box projection, isotropic shrinkage with
    threshold lambda2/beta, and the two Bregman accumulations.
    Returns (image, log).
    """
    params = _resolve_kappa(params, g, mask)
    if f0.grid != mask.grid or f0.grid != g.sino_grid:
        raise ValueError("f0, mask, and geometry grids disagree")
    if np.any(f0.data[mask.complement] != 0.0):
        raise ValueError("measured data must be zero outside the kept region")
    kept = mask.kept
    kappa = params.kappa
    beta = params.beta2
    u = np.clip(fbp_reconstruct(f0, g).data, 0.0, params.a)
    d = _zero_coeffs(sys, g.image_shape)
    b = _zero_coeffs(sys, g.image_shape)
    f0k = f0.data.copy()
    pu = forward_array(u, g)
    log = ConvergenceLog()
    ref = None if reference is None else np.asarray(getattr(reference, "data", reference))
    disc = 1.05 * np.sqrt(mask.n_kept) * params.sigma if params.sigma > 0 else 0.0
    log.stop_reason = "max_iters"
    for k in range(params.max_iters):
        v = u - adjoint_array(np.where(kept, pu - f0k, 0.0), g) / kappa
        syn = reconstruct(FrameletCoeffs(d.bands - b.bands), sys)
        u_new = np.clip((kappa * v + beta * syn) / (kappa + beta), 0.0, params.a)
        wu = decompose(u_new, sys)
        d = soft_threshold(FrameletCoeffs(wu.bands + b.bands), params.lambda2 / beta)
        b = FrameletCoeffs(b.bands + wu.bands - d.bands)
        pu = forward_array(u_new, g)
        f0k = f0k + f0.data - np.where(kept, pu, 0.0)
        for name, arr in (("v", v), ("u", u_new), ("d", d.bands), ("b", b.bands),
                          ("f0", f0k)):
            if not np.isfinite(float(np.sum(np.abs(arr)))):
                raise DivergenceError(name, k + 1)
        res_u = float(np.linalg.norm(np.where(kept, pu, 0.0) - f0.data))
        objective = params.lambda2 * isotropic_l1(wu)
        du = float(np.linalg.norm(u_new - u))
        nu = float(np.linalg.norm(u))
        rel = du / nu if nu > 0 else (0.0 if du == 0.0 else np.inf)
        ps = None if ref is None else _psnr_conv(u_new, ref)
        log.append(k + 1, 0.0, res_u, 0.0, objective, rel, ps)
        u = u_new
        if progress is not None:
            progress(u, log)
        if rel < params.tol:
            log.stop_reason = "tolerance"
            break
        if disc > 0 and res_u <= disc:
            log.stop_reason = "discrepancy"
            break
    return Image(u, g.pixel_size), log
