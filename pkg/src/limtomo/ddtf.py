"""Data-driven tight frame learning.

Alternates two exact minimizations: hard-thresholding of the analysis
coefficients of all p x p patches, and a closed-form (SVD) update of the
filters under the tight-frame constraint.  Each update keeps the bank tight
by construction, and the joint objective

    ||d - W u||_2^2 + lambda^2 ||d||_0

is nonincreasing across alternations.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from .framelet import FilterBank, _patch_matrix


@dataclass(eq=False)
class DdtfConfig:
    """Learning configuration.

    patch_size p gives p^2 filters of size p x p.  threshold is the
    hard-threshold level; None selects it per call as 3.5 * sigma_hat with
    sigma_hat the median-absolute-deviation noise estimate of the finest
    high-pass coefficients under the initial bank.
    """

    init: FilterBank
    patch_size: int = 8
    threshold: float = None
    n_alternations: int = 15

    def __post_init__(self):
        if self.patch_size < 2:
            raise ValueError("patch_size must be >= 2")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.n_alternations < 1:
            raise ValueError("n_alternations must be >= 1")


def embed_bank(bank: FilterBank, p: int) -> np.ndarray:
    """Embed a bank into the (p^2, p^2) analysis-matrix form.

    Kernels are zero-padded (or cropped) to p x p and flattened into rows;
    missing rows are zero.  Zero-padding and zero rows preserve tightness.
    """
    m = p * p
    rows = np.zeros((m, m))
    for i, k in enumerate(bank.kernels[:m]):
        z = np.zeros((p, p))
        ky = min(k.shape[0], p)
        kx = min(k.shape[1], p)
        z[:ky, :kx] = k[:ky, :kx]
        rows[i] = z.reshape(m)
    return rows


def _bank_from_rows(rows, p) -> FilterBank:
    kernels = [rows[i].reshape(p, p).copy() for i in range(rows.shape[0])]
    return FilterBank(kernels, "learned")


def filter_update(patches: np.ndarray, coeffs: np.ndarray) -> FilterBank:
    """Closed-form tight-frame filter update.

    patches: (p^2, n) matrix of image patches; coeffs: (m, n) thresholded
    coefficients.  The new analysis matrix is (1/p) U V^T from the SVD of
    coeffs @ patches.T, which satisfies Q^T Q = (1/p^2) I.  Falls back to
    a deterministic sign convention: the largest-magnitude entry of every
    left singular vector is made positive.
    """
    psq, _ = patches.shape
    p = int(round(np.sqrt(psq)))
    if p * p != psq:
        raise ValueError("patch matrix rows must be a perfect square")
    if coeffs.shape[1] != patches.shape[1]:
        raise ValueError("patch and coefficient matrices disagree on n")
    m = coeffs.shape[0]
    cross = coeffs @ patches.T  # (m, p^2)
    try:
        uu, _, vt = np.linalg.svd(cross, full_matrices=True)
    except np.linalg.LinAlgError:
        return None
    for i in range(min(m, psq)):
        jmax = int(np.argmax(np.abs(uu[:, i])))
        if uu[jmax, i] < 0:
            uu[:, i] = -uu[:, i]
            vt[i, :] = -vt[i, :]
    rows = (uu @ vt) / p
    return _bank_from_rows(rows, p)


def hard_threshold_matrix(coeffs, lam):
    return np.where(np.abs(coeffs) >= lam, coeffs, 0.0)


def ddtf_objective(coeffs_thr, coeffs_raw, lam) -> float:
    """||d - W u||^2 + lambda^2 * ||d||_0 in the patch-coefficient domain."""
    fit = float(np.sum((coeffs_thr - coeffs_raw) ** 2))
    return fit + lam * lam * int(np.count_nonzero(coeffs_thr))


def mad_threshold(coeffs, active_rows=None, scale=3.5) -> float:
    """3.5 * sigma_hat with sigma_hat the MAD estimate over high-pass rows.

    Rows with zero filters (padding of an embedded bank) carry no signal and
    are excluded; pass active_rows to select explicitly.
    """
    if active_rows is None:
        active_rows = np.linalg.norm(coeffs, axis=1) > 1e-12
        active_rows[0] = False
    hp = coeffs[active_rows]
    if hp.size == 0:
        return 0.0
    sigma = float(np.median(np.abs(hp))) / 0.6745
    return scale * sigma


def learn(u, cfg: DdtfConfig, return_objectives=False):
    """Adapt a tight filter bank to an image or sinogram.

    Returns the learned FilterBank (and, optionally, the list of objective
    values at each alternation, which is nonincreasing).  On an all-constant
    input the patch matrix carries no structure to fit: the initial bank is
    returned unchanged with a warning.
    """
    arr = np.asarray(getattr(u, "data", u), dtype=np.float64)
    p = cfg.patch_size
    if arr.ndim != 2 or min(arr.shape) < p:
        raise ValueError(f"input must be 2-D with both sides >= {p}")
    a0 = embed_bank(cfg.init, p)
    if float(np.ptp(arr)) == 0.0:
        warnings.warn("constant input: patch matrix is degenerate, "
                      "returning the initial bank unchanged")
        bank = _bank_from_rows(a0, p)
        return (bank, []) if return_objectives else bank
    patches = _patch_matrix(arr, p).T  # (p^2, n)
    raw = a0 @ patches
    lam = cfg.threshold
    if lam is None:
        lam = mad_threshold(raw)
    # the embedded initial bank is tight but not row-orthogonal, i.e. it lies
    # outside the filter update's constraint set; one update on its
    # thresholded coefficients projects into the set before the alternations
    seeded = filter_update(patches, hard_threshold_matrix(raw, lam))
    rows = a0 if seeded is None else embed_bank(seeded, p)
    objectives = []
    for _ in range(cfg.n_alternations):
        raw = rows @ patches
        thr = hard_threshold_matrix(raw, lam)
        objectives.append(ddtf_objective(thr, raw, lam))
        updated = filter_update(patches, thr)
        if updated is None:  # SVD failure: keep the previous bank
            break
        rows = embed_bank(updated, p)
    bank = _bank_from_rows(rows, p)
    defect = bank.uep_defect()
    if defect > 1e-8:
        warnings.warn(f"learned bank tightness defect {defect:.2e}")
    return (bank, objectives) if return_objectives else bank


def provenance_header(u, lam, k) -> list:
    """Serialization header lines for a learned bank."""
    arr = np.ascontiguousarray(getattr(u, "data", u))
    digest = hashlib.sha256(arr.tobytes()).hexdigest()[:16]
    return [f"source sha256:{digest}", f"threshold {lam}", f"alternations {k}"]
