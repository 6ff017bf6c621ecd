"""Desk-scale simulator for joint message detection and channel estimation
in cell-free unsourced random access: multi-source matrix AMP with state
evolution, Neyman-Pearson detection with semi-closed-form error
probabilities, genie-aided MMSE baselines, and downlink UatF rate bounds."""

__version__ = "0.1.0"

from .denoiser import (EffectiveNoise, PriorParams, jacobian,
                       log_likelihood_ratio, posterior_mean)
from .model import (LSFCProfile, Scene, SystemConfig, build_hex_geometry,
                    build_wyner_geometry, calibrate_snr, export_geometry,
                    import_geometry, make_priors, pathloss, sample_scene)

__all__ = [
    "EffectiveNoise", "PriorParams", "jacobian", "log_likelihood_ratio",
    "posterior_mean", "LSFCProfile", "Scene", "SystemConfig",
    "build_hex_geometry", "build_wyner_geometry", "calibrate_snr",
    "export_geometry", "import_geometry", "make_priors", "pathloss",
    "sample_scene", "__version__",
]
