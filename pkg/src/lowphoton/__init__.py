"""Low-photon image restoration: photon-count simulation, a Laplacian-pyramid
denoiser (MPDNet) and an illumination-based light adjustment module."""

from .imaging_sim import PhotonSimParams, synthesize_low_photon, synthesize_underexposure
from .la_module import LAModule
from .mpdnet import MPDNet
from .nn_blocks import MARB, RB, count_params
from .pyramid import laplacian_decompose, laplacian_reconstruct

__version__ = "0.1.0"

__all__ = [
    "LAModule",
    "MARB",
    "MPDNet",
    "PhotonSimParams",
    "RB",
    "count_params",
    "laplacian_decompose",
    "laplacian_reconstruct",
    "synthesize_low_photon",
    "synthesize_underexposure",
]
