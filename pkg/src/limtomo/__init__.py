"""limtomo: full-image CT reconstruction from horizontally truncated sinograms.

The measured data covers only the detector bins with |s| < mu.  The joint
solver reconstructs the whole image together with an extrapolated
full-detector sinogram, regularizing both under tight frames (fixed
B-spline banks or banks learned from the iterates), with FBP and a
frame-analysis baseline for comparison.
"""

from .grids import (GridMismatchError, Image, Sinogram, SinogramGrid,
                    TruncationMask, read_image, read_sinogram, restrict,
                    restrict_complement, write_image, write_pgm,
                    write_sinogram)
from .framelet import (FilterBank, FrameletCoeffs, FrameletSystem, decompose,
                       hard_threshold, isotropic_l1, load_bank, reconstruct,
                       save_bank, soft_threshold)
from .projector import (ProjectorGeometry, fbp_reconstruct, filter_sinogram,
                        operator_norm_sq, radon_adjoint, radon_forward)
from .ddtf import DdtfConfig, filter_update, learn
from .phantom_metrics import (SHEPP_LOGAN_MOD, Ellipse, add_noise, mssim,
                              phantom, psnr, region_mssim, region_psnr)
from .solver import (ConvergenceLog, DivergenceError, SolverParams,
                     SolverState, bos_step, init_state, solve_baseline,
                     solve_joint)

__version__ = "0.1.0"
