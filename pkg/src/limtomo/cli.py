"""Command-line driver for end-to-end experiment reproduction.

Subcommands: phantom | project | fbp | reconstruct | metrics | pipeline.
Exit codes: 0 success, 2 usage error, 3 I/O error, 4 numerical divergence.

Configuration is a plain-text key=value file; every key has a default and
command-line flags override file values.  All randomness flows from the
single config seed.  The LIMTOMO_THREADS environment variable caps the
worker-thread count.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from . import ddtf as ddtf_mod
from .framelet import FilterBank, FrameletSystem, save_bank
from .grids import (Image, Sinogram, SinogramGrid, TruncationMask, read_image,
                    read_sinogram, restrict, write_image, write_pgm,
                    write_sinogram)
from .phantom_metrics import (SHEPP_LOGAN_MOD, add_noise, load_phantom_spec,
                              mssim, phantom, psnr, region_mssim, region_psnr)
from .projector import ProjectorGeometry, fbp_reconstruct
from .projector import radon_forward
from .solver import DivergenceError, SolverParams, solve_baseline, solve_joint

METHODS = ("fbp", "sparsity", "wavelet", "ddtf")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


@dataclass
class ExperimentConfig:
    """One experiment bundle; defaults reproduce the reference setup."""

    phantom: str = "shepp-logan-mod"  # builtin name or ellipse-table path
    n: int = 256
    n_projections: int = 180
    n_bins: int = 0          # 0 -> same as n
    mu: float = 0.5
    noise_frac: float = 0.001
    seed: int = 0
    method: str = "wavelet"
    lambda1: float = 100.0
    lambda2: float = 0.01
    beta: float = 1.0
    kappa: float = 0.0       # 0 -> auto (power-iteration estimate)
    max_iters: int = 2000
    tol: float = 1e-5
    fbp_filter: str = "hann"
    ddtf_patch: int = 8
    ddtf_lambda: float = 0.0  # 0 -> auto (MAD-based)
    ddtf_k: int = 15
    relearn_every: int = 50
    out: str = "."

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.n < 16:
            raise ValueError("n must be >= 16")
        if self.n_projections < 1:
            raise ValueError("n_projections must be >= 1")
        if not 0.0 < self.mu <= 1.0:
            raise ValueError("mu must lie in (0, 1]")
        if self.noise_frac < 0:
            raise ValueError("noise_frac must be >= 0")
        if self.fbp_filter not in ("hann", "ramp"):
            raise ValueError("fbp_filter must be 'hann' or 'ramp'")

    @property
    def bins(self):
        return self.n_bins if self.n_bins > 0 else self.n

    @classmethod
    def from_file(cls, path):
        cfg = cls()
        typed = {f.name: type(getattr(cfg, f.name)) for f in fields(cls)}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                key, _, val = line.partition("=")
                key = key.strip()
                val = val.strip()
                if key not in typed:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                cfg = replace(cfg, **{key: typed[key](val)})
        cfg.validate()
        return cfg


def _geometry(cfg: ExperimentConfig):
    grid = SinogramGrid(n_angles=cfg.n_projections, n_bins=cfg.bins)
    return ProjectorGeometry((cfg.n, cfg.n), grid)


def _phantom_image(cfg: ExperimentConfig) -> Image:
    if cfg.phantom == "shepp-logan-mod":
        return phantom(cfg.n, SHEPP_LOGAN_MOD)
    if os.path.exists(cfg.phantom):
        return phantom(cfg.n, load_phantom_spec(cfg.phantom))
    raise FileNotFoundError(
        f"phantom {cfg.phantom!r}: not a builtin name or readable spec file")


def _paths(cfg: ExperimentConfig):
    out = cfg.out
    return {
        "phantom_raw": os.path.join(out, "phantom.img2"),
        "phantom_pgm": os.path.join(out, "phantom.pgm"),
        "full_sino": os.path.join(out, "sinogram_full.sino"),
        "data_sino": os.path.join(out, "sinogram_data.sino"),
        "metrics": os.path.join(out, "metrics.csv"),
    }


def _recon_paths(cfg: ExperimentConfig, method):
    out = cfg.out
    return {
        "image_raw": os.path.join(out, f"recon_{method}.img2"),
        "image_pgm": os.path.join(out, f"recon_{method}.pgm"),
        "extrap": os.path.join(out, f"extrapolated_{method}.sino"),
        "log": os.path.join(out, f"convergence_{method}.csv"),
    }


def cmd_phantom(cfg: ExperimentConfig) -> int:
    p = _paths(cfg)
    img = _phantom_image(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    write_image(p["phantom_raw"], img)
    write_pgm(p["phantom_pgm"], img)
    print(f"phantom: wrote {p['phantom_raw']} ({cfg.n}x{cfg.n})")
    return EXIT_OK


def cmd_project(cfg: ExperimentConfig) -> int:
    p = _paths(cfg)
    img = read_image(p["phantom_raw"])
    g = _geometry(cfg)
    mask = TruncationMask(g.sino_grid, cfg.mu)
    full = radon_forward(img, g)
    fmax = float(np.abs(full.data).max())
    noisy = add_noise(full, cfg.noise_frac, cfg.seed, mask=mask, reference_max=fmax)
    data = restrict(noisy, mask)
    os.makedirs(cfg.out, exist_ok=True)
    write_sinogram(p["full_sino"], full, mu=1.0)
    write_sinogram(p["data_sino"], data, mu=cfg.mu)
    print(f"project: wrote {p['data_sino']} "
          f"({mask.n_kept}/{data.data.size} bins kept, sigma="
          f"{cfg.noise_frac * fmax:.4g})")
    return EXIT_OK


def _solver_params(cfg: ExperimentConfig, sigma) -> SolverParams:
    ddtf_pair = None
    if cfg.method == "ddtf":
        lam = None if cfg.ddtf_lambda == 0.0 else cfg.ddtf_lambda
        ddtf_pair = (
            ddtf_mod.DdtfConfig(init=FilterBank.cubic_bspline(),
                                patch_size=cfg.ddtf_patch, threshold=lam,
                                n_alternations=cfg.ddtf_k),
            ddtf_mod.DdtfConfig(init=FilterBank.linear_bspline(),
                                patch_size=cfg.ddtf_patch, threshold=lam,
                                n_alternations=cfg.ddtf_k),
        )
    return SolverParams(
        lambda1=cfg.lambda1, lambda2=cfg.lambda2,
        kappa=None if cfg.kappa == 0.0 else cfg.kappa,
        beta=cfg.beta, a=1.0, max_iters=cfg.max_iters, tol=cfg.tol,
        sigma=sigma, ddtf=ddtf_pair, relearn_every=cfg.relearn_every)


def cmd_reconstruct(cfg: ExperimentConfig, method=None) -> int:
    method = method or cfg.method
    p = _paths(cfg)
    rp = _recon_paths(cfg, method)
    data, mu = read_sinogram(p["data_sino"])
    g = _geometry(cfg)
    if data.grid != g.sino_grid:
        raise ValueError("sinogram on disk does not match the configured grid")
    mask = TruncationMask(g.sino_grid, mu)
    sigma = 0.0
    if cfg.noise_frac > 0 and os.path.exists(p["full_sino"]):
        full, _ = read_sinogram(p["full_sino"])
        sigma = cfg.noise_frac * float(np.abs(full.data).max())
    reference = None
    if os.path.exists(p["phantom_raw"]):
        reference = read_image(p["phantom_raw"])

    os.makedirs(cfg.out, exist_ok=True)
    extrap = None
    log = None
    if method == "fbp":
        image = fbp_reconstruct(data, g, cfg.fbp_filter)
    else:
        params = _solver_params(replace(cfg, method=method), sigma)
        sys1 = FrameletSystem(FilterBank.cubic_bspline(), 3)
        sys2 = FrameletSystem(FilterBank.linear_bspline(), 1)
        if method == "sparsity":
            image, log = solve_baseline(data, mask, g, sys2, params,
                                        reference=reference)
        else:
            image, extrap, log = solve_joint(data, mask, g, sys1, sys2, params,
                                             reference=reference)
    write_image(rp["image_raw"], image)
    write_pgm(rp["image_pgm"], image)
    if extrap is not None:
        write_sinogram(rp["extrap"], extrap, mu=1.0)
    if log is not None:
        log.to_csv(rp["log"])
        for entry in log.learned_banks:
            dest = os.path.join(
                cfg.out,
                f"filterbank_{method}_{entry['side']}_{entry['iteration']:05d}.txt")
            save_bank(dest, entry["bank"], header_lines=entry["header"])
        viol = log.monotonicity_violations()
        note = f", residual-monotonicity flags: {len(viol)}" if viol else ""
        print(f"reconstruct[{method}]: {log.n_iters} iterations, "
              f"stopped by {log.stop_reason}{note}")
    print(f"reconstruct[{method}]: wrote {rp['image_raw']}")
    return EXIT_OK


def cmd_metrics(cfg: ExperimentConfig, per_region=False) -> int:
    p = _paths(cfg)
    ref = read_image(p["phantom_raw"])
    rows = []
    for method in METHODS:
        rp = _recon_paths(cfg, method)
        if not os.path.exists(rp["image_raw"]):
            continue
        img = read_image(rp["image_raw"])
        vals = {
            "method": method,
            "n_projections": cfg.n_projections,
            "psnr_db": psnr(np.clip(img.data, 0.0, 1.0), ref, conventional=True),
            "mssim": mssim(np.clip(img.data, 0.0, 1.0), ref.data),
            "psnr_printed": psnr(np.clip(img.data, 0.0, 1.0), ref),
        }
        if per_region:
            pin, pout = region_psnr(np.clip(img.data, 0, 1), ref.data, cfg.mu)
            sin_, sout = region_mssim(np.clip(img.data, 0, 1), ref.data, cfg.mu)
            vals.update(psnr_interior=pin, psnr_exterior=pout,
                        mssim_interior=sin_, mssim_exterior=sout)
        rows.append(vals)
    if not rows:
        raise FileNotFoundError("no reconstructions found; run reconstruct first")

    cols = list(rows[0].keys())
    new_file = not os.path.exists(p["metrics"])
    with open(p["metrics"], "a") as fh:
        if new_file:
            fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(
                f"{r[c]:.17g}" if isinstance(r[c], float) else str(r[c])
                for c in cols) + "\n")

    header = f"{'method':<10} {'N_p':>5} {'PSNR (dB)':>10} {'MSSIM':>8}"
    if per_region:
        header += f" {'MSSIM in':>9} {'MSSIM out':>10}"
    print(header)
    for r in rows:
        line = (f"{r['method']:<10} {r['n_projections']:>5} "
                f"{r['psnr_db']:>10.4f} {r['mssim']:>8.4f}")
        if per_region:
            line += f" {r['mssim_interior']:>9.4f} {r['mssim_exterior']:>10.4f}"
        print(line)
    return EXIT_OK


def cmd_pipeline(cfg: ExperimentConfig, per_region=False) -> int:
    cmd_phantom(cfg)
    cmd_project(cfg)
    for method in METHODS:
        cmd_reconstruct(cfg, method=method)
    return cmd_metrics(cfg, per_region=per_region)


def _apply_thread_cap():
    cap = os.environ.get("LIMTOMO_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMBA_NUM_THREADS"):
        os.environ.setdefault(var, cap)
    try:
        import numba
        numba.set_num_threads(max(1, int(cap)))
    except (ImportError, ValueError):
        pass


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="limtomo",
        description="Reconstruction of full CT images from horizontally "
                    "truncated sinograms")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="K=V",
                        help="override a config key (repeatable)")
    for name in ("phantom", "project", "fbp", "reconstruct", "metrics",
                 "pipeline"):
        p = sub.add_parser(name, parents=[common])
        if name in ("metrics", "pipeline"):
            p.add_argument("--per-region", action="store_true",
                           help="also report interior/exterior scores")
    return ap


def _load_config(args) -> ExperimentConfig:
    cfg = (ExperimentConfig.from_file(args.config) if args.config
           else ExperimentConfig())
    typed = {f.name: type(getattr(cfg, f.name)) for f in fields(ExperimentConfig)}
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        if key not in typed:
            raise ValueError(f"unknown config key {key!r}")
        cfg = replace(cfg, **{key: typed[key](val)})
    if args.out:
        cfg = replace(cfg, out=args.out)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    _apply_thread_cap()
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "phantom":
            return cmd_phantom(cfg)
        if args.command == "project":
            return cmd_project(cfg)
        if args.command == "fbp":
            return cmd_reconstruct(cfg, method="fbp")
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg)
        if args.command == "metrics":
            return cmd_metrics(cfg, per_region=args.per_region)
        if args.command == "pipeline":
            return cmd_pipeline(cfg, per_region=args.per_region)
        ap.error(f"unknown command {args.command}")
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FileNotFoundError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
