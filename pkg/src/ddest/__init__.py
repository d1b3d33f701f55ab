"""Joint delay-Doppler path estimation toolkit.

Pipeline: synthesize or load frequency-time snapshots, preprocess them into
multi-window delay-Doppler images, detect paths with a grid-cell CNN, and
refine the estimates with a damped Gauss-Newton maximum-likelihood iteration.
Baselines (successive-cancellation ML, EDC order selection) and evaluation
tooling (CRB, MSE sweeps, order-error statistics) round out the package.
"""

from .channel import (PathSet, SamplingGrid, SceneConfig, Snapshot, add_noise,
                      draw_paths, sample_random_scene, sigma_for_snr, substream,
                      synthesize_channel)
from .encoding import CellGridSpec, EncodedLabel, assign_cell, decode, encode, normalize_params
from .errors import (CellOverflowError, ChecksumError, ConfigError, DataFormatError,
                     DdestError, DegenerateBasisError, NumericalError,
                     TruncatedFileError, ValidationError, VersionMismatchError)
from .preprocess import (DEFAULT_WINDOWS, CnnInput, RegionOfInterest, WindowKind,
                         apply_windows, preprocess_snapshot, to_real_channels,
                         tukey, window_1d, zoom_dft_2d)
from .refine import (GnConfig, RefineResult, blue_gains, fisher_information,
                     gauss_newton_refine, model_jacobian, neg_log_likelihood,
                     nll_gradient, pack_params, refine_path_estimates, unpack_params)
from .scenario import BistaticScenario, SphereTrajectories, los_delay, sphere_scenario

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
