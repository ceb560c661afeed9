"""Acceptance suite: one test per criterion, one printed verdict line each.

Run `pytest tests/test_acceptance.py -v -s` to see the verdict lines inline.
Criteria 7 and 8 perform the full-size reconstructions (256 x 256, 180 and
90 projections, up to 2000 iterations per method) and are marked slow.
"""

import hashlib
import os
import time

import numpy as np
import pytest

import limtomo as lt
from limtomo.cli import main as cli_main
from limtomo.ddtf import DdtfConfig, learn
from limtomo.framelet import FrameletCoeffs, decompose, reconstruct
from limtomo.solver import SolverParams, solve_baseline, solve_joint

TABLE_PSNR_180 = {"fbp": 13.9467, "sparsity": 20.848,
                  "wavelet": 23.9691, "ddtf": 24.1207}
TABLE_PSNR_90 = {"fbp": 13.8511, "sparsity": 19.038,
                 "wavelet": 20.8845, "ddtf": 22.4786}


def verdict(criterion, ok, detail):
    print(f"\nacceptance {criterion}: {'PASS' if ok else 'FAIL'} — {detail}")
    return ok


def disk_image(n, r, ss=8):
    m = n * ss
    c = (np.arange(m) + 0.5) * (2.0 / m) - 1.0
    ind = ((c[None, :] ** 2 + c[:, None] ** 2) <= r * r).astype(float)
    return ind.reshape(n, ss, n, ss).mean(axis=(1, 3))


def test_criterion_1_tight_frame_identity():
    rng = np.random.default_rng(101)
    t0 = time.time()
    worst = 0.0
    for sysm in (lt.FrameletSystem(lt.FilterBank.linear_bspline(), 1),
                 lt.FrameletSystem(lt.FilterBank.cubic_bspline(), 3)):
        for _ in range(3):
            u = rng.standard_normal((64, 64))
            rec = reconstruct(decompose(u, sysm), sysm)
            worst = max(worst, float(np.abs(rec - u).max()))
    elapsed = time.time() - t0
    ok = worst < 1e-10 and elapsed < 1.0
    assert verdict(1, ok, f"max |WtWu - u| = {worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_projector_adjointness():
    g = lt.ProjectorGeometry((64, 64), lt.SinogramGrid(90, 64))
    rng = np.random.default_rng(102)
    t0 = time.time()
    worst = 0.0
    for _ in range(20):
        u = rng.standard_normal((64, 64))
        f = rng.standard_normal((90, 64))
        pu = lt.radon_forward(u, g).data
        lhs = np.vdot(pu, f)
        rhs = np.vdot(u, lt.radon_adjoint(f, g).data)
        worst = max(worst, abs(lhs - rhs)
                    / (np.linalg.norm(pu) * np.linalg.norm(f)))
    elapsed = time.time() - t0
    ok = worst < 1e-8 and elapsed < 10.0
    assert verdict(2, ok, f"max relative defect = {worst:.2e}, {elapsed:.1f}s")


def test_criterion_3_analytic_radon_oracle():
    n = 256
    g = lt.ProjectorGeometry((n, n), lt.SinogramGrid(180, n))
    u = disk_image(n, 0.5)
    t0 = time.time()
    f = lt.radon_forward(u, g)
    elapsed = time.time() - t0
    s = g.sino_grid.bin_centers
    ds = g.sino_grid.bin_spacing
    profile = 2.0 * np.sqrt(np.maximum(0.25 - s ** 2, 0.0))
    inner = np.abs(s) <= 0.5 - ds  # excludes the straddling bin per side
    rel = float((np.abs(f.data[:, inner] - profile[inner])
                 / profile[inner]).max())
    ok = rel < 0.02 and elapsed < 5.0
    assert verdict(3, ok, f"max relative error = {rel:.4f}, {elapsed:.1f}s")


def test_criterion_4_threshold_oracles():
    rng = np.random.default_rng(104)
    t0 = time.time()
    # soft threshold vs per-pixel numerical minimizer (radial golden-section)
    c = FrameletCoeffs(rng.standard_normal((2, 9, 6, 6)))
    alpha = 0.7
    out = lt.soft_threshold(c, alpha)
    def radial_minimizer(r):
        # golden-section bracket, then parabolic interpolation (exact on the
        # smooth branch), then compare against the kink at the origin
        lo, hi = 0.0, r
        phi = (np.sqrt(5) - 1) / 2
        cost = lambda t: alpha * t + 0.5 * (t - r) ** 2
        c1, c2 = hi - phi * (hi - lo), lo + phi * (hi - lo)
        for _ in range(60):
            if cost(c1) < cost(c2):
                hi, c2 = c2, c1
                c1 = hi - phi * (hi - lo)
            else:
                lo, c1 = c1, c2
                c2 = lo + phi * (hi - lo)
        t0 = (lo + hi) / 2
        h = max(1e-3 * r, 1e-12)
        ts = np.array([t0 - h, t0, t0 + h])
        cs = np.array([cost(t) for t in ts])
        denom = cs[0] - 2 * cs[1] + cs[2]
        vertex = t0 if denom == 0 else t0 - 0.5 * h * (cs[2] - cs[0]) / denom
        vertex = min(max(vertex, 0.0), r)
        return 0.0 if cost(0.0) < cost(vertex) else vertex

    worst = 0.0
    for lev in range(2):
        for i in range(6):
            for j in range(6):
                v = c.bands[lev, 1:, i, j]
                r = np.linalg.norm(v)
                expect = v * (radial_minimizer(r) / r) if r > 0 else v * 0
                worst = max(worst, float(
                    np.abs(out.bands[lev, 1:, i, j] - expect).max()))
    # hard threshold vs exhaustive on/off enumeration
    vals = rng.standard_normal(200)
    lam = 0.9
    hard = lt.hard_threshold(FrameletCoeffs(vals.reshape(1, 8, 5, 5)), lam)
    exact = True
    for v, d in zip(vals, hard.bands.ravel()):
        best = v if lam ** 2 <= v ** 2 else 0.0
        exact = exact and (d == best)
    elapsed = time.time() - t0
    ok = worst < 1e-8 and exact and elapsed < 5.0
    assert verdict(4, ok, f"soft defect = {worst:.2e}, hard exact = {exact}, "
                          f"{elapsed:.1f}s")


def test_criterion_5_ddtf_contract():
    rng = np.random.default_rng(105)
    u = np.clip(lt.phantom(64).data + 0.02 * rng.standard_normal((64, 64)), 0, 1)
    t0 = time.time()
    cfg = DdtfConfig(init=lt.FilterBank.cubic_bspline(), patch_size=8,
                     threshold=0.05, n_alternations=10)
    bank, objs = learn(u, cfg, return_objectives=True)
    elapsed = time.time() - t0
    defect = bank.uep_defect()
    mono = all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(objs, objs[1:]))
    ok = defect < 1e-10 and mono and len(objs) == 10 and elapsed < 30.0
    assert verdict(5, ok, f"UEP defect = {defect:.2e}, "
                          f"objective nonincreasing = {mono}, {elapsed:.1f}s")


def smooth_feasible_image(n):
    c = (np.arange(n) + 0.5) * (2.0 / n) - 1.0
    x, y = np.meshgrid(c, c)
    u = (0.55 * np.exp(-((x - 0.15) ** 2 + (y + 0.1) ** 2) / 0.08)
         + 0.35 * np.exp(-((x + 0.3) ** 2 + (y - 0.25) ** 2) / 0.05))
    return u * np.exp(-np.maximum(x ** 2 + y ** 2 - 0.64, 0.0) / 0.02)


def test_criterion_6_complete_data_sanity():
    sys1 = lt.FrameletSystem(lt.FilterBank.cubic_bspline(), 3)
    sys2 = lt.FrameletSystem(lt.FilterBank.linear_bspline(), 1)
    # consistency: residual below 1e-3 of the data norm within 500 sweeps
    n = 64
    g = lt.ProjectorGeometry((n, n), lt.SinogramGrid(90, n))
    mask = lt.TruncationMask(g.sino_grid, 1.0)
    f0 = lt.restrict(lt.radon_forward(smooth_feasible_image(n), g), mask)
    params = SolverParams(lambda1=0.0, lambda2=0.0, beta=1.0, a=1.0,
                          max_iters=500, tol=0.0)
    u, fx, log = solve_joint(f0, mask, g, sys1, sys2, params)
    res = log.rows[-1][2] / np.linalg.norm(f0.data)
    # solver equivalence at N=32
    n2 = 32
    g2 = lt.ProjectorGeometry((n2, n2), lt.SinogramGrid(45, n2))
    mask2 = lt.TruncationMask(g2.sino_grid, 1.0)
    f02 = lt.restrict(lt.radon_forward(smooth_feasible_image(n2), g2), mask2)
    p2 = SolverParams(lambda1=0.0, lambda2=0.0, beta=1.0, a=1.0,
                      max_iters=200, tol=0.0)
    uj, _, _ = solve_joint(f02, mask2, g2, sys1, sys2, p2)
    ubase, _ = solve_baseline(f02, mask2, g2, sys2, p2)
    rel = (np.linalg.norm(uj.data - ubase.data)
           / max(np.linalg.norm(ubase.data), 1e-30))
    ok = res < 1e-3 and log.n_iters <= 500 and rel < 1e-6
    assert verdict(6, ok, f"residual/||f0|| = {res:.2e} in {log.n_iters} "
                          f"iterations; joint-vs-baseline = {rel:.2e}")


# ---------------------------------------------------------------------------
# Full-size table reproduction (criteria 7 and 8).
# ---------------------------------------------------------------------------

_RUNS = {}


def full_run(n_projections):
    """All four methods at n=256, mu=0.5, 0.1% noise; cached per N_p."""
    if n_projections in _RUNS:
        return _RUNS[n_projections]
    n = 256
    grid = lt.SinogramGrid(n_projections, n)
    g = lt.ProjectorGeometry((n, n), grid)
    mask = lt.TruncationMask(grid, 0.5)
    ph = lt.phantom(n)
    f_full = lt.radon_forward(ph, g)
    fmax = float(np.abs(f_full.data).max())
    sigma = 0.001 * fmax
    f0 = lt.restrict(lt.add_noise(f_full, 0.001, seed=0, mask=mask,
                                  reference_max=fmax), mask)
    sys1 = lt.FrameletSystem(lt.FilterBank.cubic_bspline(), 3)
    sys2 = lt.FrameletSystem(lt.FilterBank.linear_bspline(), 1)
    kappa = 1.05 * lt.operator_norm_sq(g, mask, 30)
    params = SolverParams(kappa=kappa, max_iters=2000, tol=1e-5, sigma=sigma)
    out = {"phantom": ph, "mask": mask, "times": {}}

    t0 = time.time()
    out["fbp"] = np.clip(lt.fbp_reconstruct(f0, g, "hann").data, 0, 1)
    out["times"]["fbp"] = time.time() - t0

    t0 = time.time()
    ub, _ = solve_baseline(f0, mask, g, sys2, params, reference=ph)
    out["sparsity"] = np.clip(ub.data, 0, 1)
    out["times"]["sparsity"] = time.time() - t0

    t0 = time.time()
    uw, _, _ = solve_joint(f0, mask, g, sys1, sys2, params, reference=ph)
    out["wavelet"] = np.clip(uw.data, 0, 1)
    out["times"]["wavelet"] = time.time() - t0

    t0 = time.time()
    pd = SolverParams(kappa=kappa, max_iters=2000, tol=1e-5, sigma=sigma,
                      ddtf=(DdtfConfig(init=lt.FilterBank.cubic_bspline()),
                            DdtfConfig(init=lt.FilterBank.linear_bspline())))
    ud, _, _ = solve_joint(f0, mask, g, sys1, sys2, pd, reference=ph)
    out["ddtf"] = np.clip(ud.data, 0, 1)
    out["times"]["ddtf"] = time.time() - t0

    _RUNS[n_projections] = out
    return out


@pytest.mark.slow
@pytest.mark.parametrize("n_projections,table",
                         [(180, TABLE_PSNR_180), (90, TABLE_PSNR_90)])
def test_criterion_7_table_reproduction(n_projections, table):
    run = full_run(n_projections)
    ph = run["phantom"]
    psnr = {m: lt.psnr(run[m], ph, conventional=True)
            for m in ("fbp", "sparsity", "wavelet", "ddtf")}
    ssim = {m: lt.mssim(run[m], ph.data)
            for m in ("fbp", "sparsity", "wavelet", "ddtf")}
    order_psnr = (psnr["fbp"] < psnr["sparsity"] < psnr["wavelet"]
                  <= psnr["ddtf"])
    order_ssim = (ssim["fbp"] < ssim["sparsity"] < ssim["wavelet"]
                  < ssim["ddtf"])
    in_band = abs(psnr["fbp"] - table["fbp"]) <= 1.5
    if n_projections == 180:
        for m, tol in (("sparsity", 2.5), ("wavelet", 2.5), ("ddtf", 2.5)):
            in_band = in_band and abs(psnr[m] - table[m]) <= tol
    budget = all(t <= 1800.0 for t in run["times"].values())
    detail = (f"N_p={n_projections} psnr=" +
              " ".join(f"{m}:{psnr[m]:.2f}" for m in psnr) +
              " mssim=" + " ".join(f"{m}:{ssim[m]:.3f}" for m in ssim) +
              f" orderings={order_psnr}/{order_ssim} bands={in_band}"
              f" budget={budget}")
    ok = order_psnr and order_ssim and in_band and budget
    assert verdict(f"7({n_projections})", ok, detail)


@pytest.mark.slow
def test_criterion_8_exterior_recovery():
    run = full_run(90)
    ph = run["phantom"]
    _, ddtf_out = lt.region_mssim(run["ddtf"], ph.data, 0.5)
    _, fbp_out = lt.region_mssim(run["fbp"], ph.data, 0.5)
    gap = ddtf_out - fbp_out
    ok = gap >= 0.2
    assert verdict(8, ok, f"exterior MSSIM ddtf {ddtf_out:.3f} vs "
                          f"fbp {fbp_out:.3f}, gap {gap:.3f}")


@pytest.mark.slow
def test_criterion_9_pipeline_determinism(tmp_path):
    def run_tree(dest):
        args = ["pipeline", "--out", str(dest),
                "--set", "n=32", "--set", "n_projections=30",
                "--set", "max_iters=10", "--set", "relearn_every=5",
                "--set", "ddtf_patch=4", "--set", "ddtf_k=2",
                "--set", "seed=11"]
        assert cli_main(args) == 0
        digest = hashlib.sha256()
        for name in sorted(os.listdir(dest)):
            digest.update(name.encode())
            digest.update(open(os.path.join(dest, name), "rb").read())
        return digest.hexdigest()

    h1 = run_tree(tmp_path / "r1")
    h2 = run_tree(tmp_path / "r2")
    ok = h1 == h2
    assert verdict(9, ok, f"pipeline hashes {'match' if ok else 'differ'} "
                          f"({h1[:12]}…)")
